//! Finite-difference verification of reverse-mode gradients (64-bit).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    /// `(analytic, finite-difference)` values at `worst`.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

pub type GraphFn<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

fn eval(f: &GraphFn<'_>, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new().with_nonfinite_trap(true);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::Config("gradient check needs a scalar output".into()));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every element of every input, returning the max of
/// `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-6)`.
pub fn check_gradients(
    f: &GraphFn<'_>,
    inputs: &[Tensor<f64>],
    eps: f64,
) -> Result<GradCheckReport> {
    check_gradients_sampled(f, inputs, eps, usize::MAX, 0)
}

/// As [`check_gradients`], visiting at most `max_per_input` seeded-random
/// elements of each input.
pub fn check_gradients_sampled(
    f: &GraphFn<'_>,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_per_input: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut g = Graph::new().with_nonfinite_trap(true);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let n = inputs[k].numel();
        let ad = grads.get(*var);
        let picks: Vec<usize> = if n <= max_per_input {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, max_per_input).into_vec();
            v.sort_unstable();
            v
        };
        for i in picks {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let up = eval(f, &work)?;
            work[k].data_mut()[i] = orig - eps;
            let down = eval(f, &work)?;
            work[k].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let a = ad.map(|t| t.data()[i]).unwrap_or(0.0);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((k, i));
                report.worst_values = (a, fd);
            }
        }
    }
    Ok(report)
}
