//! Multi-step autoregressive objective.

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::Window;
use crate::error::{shape_err, Result};
use crate::models::ModelState;
use crate::scalar::cst;
use crate::Scalar;

/// Per-step area-weighted squared errors of the fed-forward unroll and
/// their normalized sum, as graph nodes.
pub struct LossNodes {
    pub total: Var,
    pub steps: Vec<Var>,
}

/// Builds `Σ_m weighted_mean((X̂_{m+1} − X_{m+1})²) / M` in `g`, where
/// `X̂_{m+1} = X̂_m + f_θ(X̂_m, F_m, C)` and `X̂_0 = X_0`. With latitude
/// weights of mean one this is the summed loss divided by `M K_p H W`.
pub fn multi_step_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    model: &ModelState<T>,
    bound: &[Var],
    window: &Window<T>,
    weights: &[T],
) -> Result<LossNodes> {
    let m = window.f.len();
    if m == 0 || window.x.len() != m + 1 {
        return Err(shape_err(
            "multi_step_loss",
            format!("{} states for {} forcings", window.x.len(), m),
        ));
    }
    let c = g.constant(window.c.clone());
    let mut state = g.constant(window.x[0].clone());
    let mut steps = Vec::with_capacity(m);
    for i in 0..m {
        let f = g.constant(window.f[i].clone());
        let dx = model.forward_graph(g, bound, state, f, c)?;
        state = g.add(state, dx)?;
        let target = g.constant(window.x[i + 1].clone());
        let diff = g.sub(state, target)?;
        let sq = g.mul(diff, diff)?;
        steps.push(g.weighted_mean(sq, weights)?);
    }
    let mut total = steps[0];
    for &s in &steps[1..] {
        total = g.add(total, s)?;
    }
    let total = g.scale(total, cst::<T>(1.0 / m as f64))?;
    Ok(LossNodes { total, steps })
}

/// Loss value without gradients.
pub fn multi_step_loss<T: Scalar>(model: &ModelState<T>, window: &Window<T>, weights: &[T]) -> Result<f64> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let nodes = multi_step_loss_graph(&mut g, model, bound.vars(), window, weights)?;
    Ok(g.value(nodes.total).data()[0].to_f64().unwrap_or(f64::NAN))
}

/// Loss of the persistence forecast `X̂_m = X_0`.
pub fn persistence_loss<T: Scalar>(window: &Window<T>, weights: &[f64]) -> f64 {
    let x0 = &window.x[0];
    let m = window.f.len();
    let total: f64 = window.x[1..]
        .iter()
        .map(|x| weighted_mse(x0, x, weights))
        .sum();
    total / m as f64
}

/// `(1/numel) Σ a_h (a − b)²` over `[K][H][W]` fields.
pub fn weighted_mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, weights: &[f64]) -> f64 {
    let shape = a.shape();
    let w = shape[shape.len() - 1];
    let h = weights.len();
    let mut acc = 0.0;
    for (r, (ra, rb)) in a.data().chunks_exact(w).zip(b.data().chunks_exact(w)).enumerate() {
        let s: f64 = ra
            .iter()
            .zip(rb)
            .map(|(x, y)| {
                let d = x.to_f64().unwrap_or(f64::NAN) - y.to_f64().unwrap_or(f64::NAN);
                d * d
            })
            .sum();
        acc += weights[r % h] * s;
    }
    acc / a.numel() as f64
}

/// Mean loss over `windows` and its gradient with respect to every
/// parameter, from a single backward pass.
pub fn batch_loss_and_grads<T: Scalar>(
    model: &ModelState<T>,
    windows: &[Window<T>],
    weights: &[T],
) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let mut total: Option<Var> = None;
    for w in windows {
        let l = multi_step_loss_graph(&mut g, model, bound.vars(), w, weights)?.total;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    let Some(total) = total else {
        return Err(shape_err("batch_loss", "empty batch"));
    };
    let loss = g.scale(total, cst::<T>(1.0 / windows.len() as f64))?;
    let value = g.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let mut grads = g.backward(loss)?;
    let out = bound
        .vars()
        .iter()
        .zip(model.params().tensors())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();
    Ok((value, out))
}
