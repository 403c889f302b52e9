//! FourCastNet: patch embedding followed by AFNO token-mixing blocks.

use super::layers::{self, Init};
use super::{ModelSpec, Params};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::scalar::{cst, Scalar};
use crate::spectral::{fft2_forward, fft2_inverse};

pub(super) fn init(init: &mut Init, spec: &ModelSpec, grid: &GridSpec) {
    let d = spec.hidden_dim;
    let (ph, pw) = spec.patch_size;
    let bs = d / spec.n_blocks;
    init.linear("patch_embed", spec.n_inputs() * ph * pw, d);
    if spec.use_pos_embed {
        init.normal("pos_embed", &[spec.n_tokens(grid), d]);
    }
    for b in 0..spec.n_layers {
        init.normal(format!("blocks.{b}.filter.w1"), &[spec.n_blocks, bs, bs, 2]);
        init.normal(format!("blocks.{b}.filter.w2"), &[spec.n_blocks, bs, bs, 2]);
        init.mlp(&format!("blocks.{b}.mlp"), d, spec.mlp_hidden());
    }
    init.linear_zero("head", d, spec.n_prognostic * ph * pw);
}

/// Frequency mask keeping `|k_h| <= f H/2` and `k_w <= f W/2`.
fn mode_mask<T: Scalar>(h: usize, wf: usize, d: usize, fraction: f64) -> Tensor<T> {
    let kh_max = (fraction * (h / 2) as f64).floor() as usize;
    let kw_max = (fraction * (wf - 1) as f64).floor() as usize;
    let mut data = Vec::with_capacity(h * wf * d * 2);
    for kh in 0..h {
        let kh_abs = kh.min(h - kh);
        for kw in 0..wf {
            let keep = if kh_abs <= kh_max && kw <= kw_max { T::one() } else { T::zero() };
            data.extend(std::iter::repeat(keep).take(d * 2));
        }
    }
    Tensor::new(vec![h * wf, d * 2], data).unwrap()
}

/// The spectral path of an AFNO block on `[h w, D]` tokens: orthonormal
/// 2D FFT, a bias-free block-diagonal two-layer complex MLP per frequency,
/// soft-shrinkage and the inverse FFT. Zero tokens map to zero.
pub fn afno_filter<T: Scalar>(
    g: &mut Graph<T>,
    w1: Var,
    w2: Var,
    x: Var,
    lattice: (usize, usize),
    sparsity_threshold: f64,
    hard_threshold_fraction: f64,
) -> Result<Var> {
    let (h, w) = lattice;
    let d = g.shape(x)[1];
    let nb = g.shape(w1)[0];
    if nb == 0 || d % nb != 0 {
        return Err(Error::Config(format!("hidden_dim {d} not divisible by n_blocks {nb}")));
    }
    let bs = d / nb;
    let wf = w / 2 + 1;
    let norm = cst::<T>(((h * w) as f64).sqrt());
    let field = layers::tokens_to_field(g, x, h, w)?;
    let spec = fft2_forward(g, field)?;
    let spec = g.scale(spec, T::one() / norm)?;
    let spec = g.permute(spec, &[1, 2, 0, 3])?;
    let spec = g.reshape(spec, &[h * wf, nb, bs, 2])?;
    let k1 = layers::realify(g, w1)?;
    let o = g.einsum("fbir,birjs->fbjs", spec, k1)?;
    let o = g.gelu(o)?;
    let k2 = layers::realify(g, w2)?;
    let o = g.einsum("fbir,birjs->fbjs", o, k2)?;
    let mut o = g.soft_shrink(o, cst(sparsity_threshold))?;
    if hard_threshold_fraction < 1.0 {
        let m = g.constant(mode_mask(h, wf, d, hard_threshold_fraction));
        let flat = g.reshape(o, &[h * wf, d * 2])?;
        let flat = g.mul(flat, m)?;
        o = flat;
    }
    let o = g.reshape(o, &[h, wf, d, 2])?;
    let o = g.permute(o, &[2, 0, 1, 3])?;
    let o = g.scale(o, norm)?;
    let out = fft2_inverse(g, o, w)?;
    layers::field_to_tokens(g, out)
}

/// `z = x + filter(LN(x))`, then `z + MLP(LN(z))`.
pub(super) fn block<T: Scalar>(
    g: &mut Graph<T>,
    p: &Params<'_>,
    spec: &ModelSpec,
    lattice: (usize, usize),
    b: usize,
    x: Var,
) -> Result<Var> {
    let y = g.layer_norm(x)?;
    let s = afno_filter(
        g,
        p.get(&format!("blocks.{b}.filter.w1")),
        p.get(&format!("blocks.{b}.filter.w2")),
        y,
        lattice,
        spec.sparsity_threshold,
        spec.hard_threshold_fraction,
    )?;
    let z = g.add(x, s)?;
    layers::mlp_residual(g, p, &format!("blocks.{b}.mlp"), z)
}

pub(super) fn forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &Params<'_>,
    spec: &ModelSpec,
    grid: &GridSpec,
    input: Var,
) -> Result<Var> {
    let (ph, pw) = spec.patch_size;
    let lattice = (grid.n_lat() / ph, grid.n_lon() / pw);
    let patches = layers::patchify(g, input, spec.patch_size)?;
    let mut x = layers::linear(g, p, "patch_embed", patches)?;
    if p.has("pos_embed") {
        x = g.add(x, p.get("pos_embed"))?;
    }
    for b in 0..spec.n_layers {
        x = block(g, p, spec, lattice, b, x)?;
    }
    let out = layers::linear(g, p, "head", x)?;
    layers::unpatchify(
        g,
        out,
        spec.n_prognostic,
        (grid.n_lat(), grid.n_lon()),
        spec.patch_size,
    )
}
