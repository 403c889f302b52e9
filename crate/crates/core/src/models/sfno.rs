//! Spherical Fourier neural operator.
//!
//! Each block is `z = x + SHT⁻¹(K ⊙ SHT(LN(x)))` followed by
//! `z + MLP(LN(z))`; `K_l` is a dense complex `D x D` matrix per degree,
//! shared over orders `m`.

use super::layers::{self, Init};
use super::{ModelSpec, Params};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::grid::GridSpec;
use crate::scalar::Scalar;
use crate::spectral::ShtPlan;

pub(super) fn init(init: &mut Init, spec: &ModelSpec, grid: &GridSpec) -> Result<()> {
    let plan = ShtPlan::<f64>::new(grid, spec.hard_threshold_fraction)?;
    let d = spec.hidden_dim;
    init.linear("encoder", spec.n_inputs(), d);
    if spec.use_pos_embed {
        init.normal("pos_embed", &[grid.n_points(), d]);
    }
    for b in 0..spec.n_layers {
        init.normal(format!("blocks.{b}.spectral"), &[plan.lmax() + 1, d, d, 2]);
        if spec.use_mlp {
            init.mlp(&format!("blocks.{b}.mlp"), d, spec.mlp_hidden());
        }
    }
    let head_in = d + if spec.big_skip { spec.n_inputs() } else { 0 };
    init.linear_zero("head", head_in, spec.n_prognostic);
    Ok(())
}

/// Spectral path: `[N, D]` tokens to `[N, D]`.
pub(super) fn spectral_conv<T: Scalar>(
    g: &mut Graph<T>,
    weights: Var,
    plan: &ShtPlan<T>,
    x: Var,
) -> Result<Var> {
    let (h, w) = (plan.grid().n_lat(), plan.grid().n_lon());
    let field = layers::tokens_to_field(g, x, h, w)?;
    let coeffs = plan.forward(g, field)?;
    let k = layers::realify(g, weights)?;
    let mixed = g.einsum("lirop,imlr->omlp", k, coeffs)?;
    let out = plan.inverse(g, mixed)?;
    layers::field_to_tokens(g, out)
}

pub(super) fn block<T: Scalar>(
    g: &mut Graph<T>,
    p: &Params<'_>,
    spec: &ModelSpec,
    plan: &ShtPlan<T>,
    b: usize,
    x: Var,
) -> Result<Var> {
    let y = g.layer_norm(x)?;
    let s = spectral_conv(g, p.get(&format!("blocks.{b}.spectral")), plan, y)?;
    let z = g.add(x, s)?;
    if spec.use_mlp {
        layers::mlp_residual(g, p, &format!("blocks.{b}.mlp"), z)
    } else {
        Ok(z)
    }
}

pub(super) fn forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &Params<'_>,
    spec: &ModelSpec,
    grid: &GridSpec,
    plan: &ShtPlan<T>,
    input: Var,
) -> Result<Var> {
    let tokens_in = layers::patchify(g, input, (1, 1))?;
    let mut x = layers::linear(g, p, "encoder", tokens_in)?;
    if p.has("pos_embed") {
        x = g.add(x, p.get("pos_embed"))?;
    }
    for b in 0..spec.n_layers {
        x = block(g, p, spec, plan, b, x)?;
    }
    if spec.big_skip {
        x = g.concat(&[x, tokens_in], 1)?;
    }
    let out = layers::linear(g, p, "head", x)?;
    layers::unpatchify(g, out, spec.n_prognostic, (grid.n_lat(), grid.n_lon()), (1, 1))
}
