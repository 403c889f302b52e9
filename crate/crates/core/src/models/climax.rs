//! ClimaX-style vision transformer with per-variable tokenization.

use super::layers::{self, Init};
use super::{ModelSpec, Params};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::grid::GridSpec;
use crate::scalar::{cst, Scalar};

pub(super) fn init(init: &mut Init, spec: &ModelSpec, grid: &GridSpec) {
    let d = spec.hidden_dim;
    let v = spec.n_inputs();
    let p = spec.patch_size.0 * spec.patch_size.1;
    init.fan_in("token_embed.weight", &[v, p, d], p);
    init.zeros("token_embed.bias", &[v, d]);
    init.normal("var_embed", &[v, d]);
    init.normal("agg.query", &[1, d]);
    for name in ["agg.q", "agg.k", "agg.v", "agg.out"] {
        init.linear_fan_in(name, d, d);
    }
    if spec.use_pos_embed {
        init.normal("pos_embed", &[spec.n_tokens(grid), d]);
    }
    for b in 0..spec.n_layers {
        init.linear_fan_in(&format!("blocks.{b}.attn.qkv"), d, 3 * d);
        init.linear_fan_in(&format!("blocks.{b}.attn.proj"), d, d);
        init.linear_fan_in(&format!("blocks.{b}.mlp.fc1"), d, spec.mlp_hidden());
        init.linear_fan_in(&format!("blocks.{b}.mlp.fc2"), spec.mlp_hidden(), d);
    }
    for i in 0..spec.decoder_depth {
        init.linear_fan_in(&format!("decoder.{i}"), d, d);
    }
    init.linear_zero("head", d, spec.n_prognostic * p);
}

/// `[V, H, W]` to `[N, V, D]` per-variable patch embeddings.
pub(crate) fn encode_variables<T: Scalar>(
    g: &mut Graph<T>,
    p: &Params<'_>,
    spec: &ModelSpec,
    input: Var,
) -> Result<Var> {
    let s = g.shape(input).to_vec();
    let (v, h, w) = (s[0], s[1], s[2]);
    let (ph, pw) = spec.patch_size;
    let (hp, wp) = (h / ph, w / pw);
    let x = g.reshape(input, &[v, hp, ph, wp, pw])?;
    let x = g.permute(x, &[0, 1, 3, 2, 4])?;
    let x = g.reshape(x, &[v, hp * wp, ph * pw])?;
    let x = g.einsum("vnp,vpd->nvd", x, p.get("token_embed.weight"))?;
    let x = g.add(x, p.get("token_embed.bias"))?;
    g.add(x, p.get("var_embed"))
}

/// Multi-head cross-attention over the variable axis with one learned
/// query: `[N, V, D]` to `[N, D]`.
pub(crate) fn aggregate_variables<T: Scalar>(
    g: &mut Graph<T>,
    p: &Params<'_>,
    spec: &ModelSpec,
    x: Var,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (n, v, d) = (s[0], s[1], s[2]);
    let nh = spec.n_heads;
    let dh = d / nh;
    let flat = g.reshape(x, &[n * v, d])?;
    let k = layers::linear(g, p, "agg.k", flat)?;
    let k = g.reshape(k, &[n, v, nh, dh])?;
    let val = layers::linear(g, p, "agg.v", flat)?;
    let val = g.reshape(val, &[n, v, nh, dh])?;
    let q = layers::linear(g, p, "agg.q", p.get("agg.query"))?;
    let q = g.reshape(q, &[nh, dh])?;
    let scores = g.einsum("nvhe,he->nhv", k, q)?;
    let scores = g.scale(scores, cst(1.0 / (dh as f64).sqrt()))?;
    let attn = g.softmax(scores)?;
    let o = g.einsum("nhv,nvhe->nhe", attn, val)?;
    let o = g.reshape(o, &[n, d])?;
    layers::linear(g, p, "agg.out", o)
}

fn self_attention<T: Scalar>(
    g: &mut Graph<T>,
    p: &Params<'_>,
    name: &str,
    nh: usize,
    x: Var,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (n, d) = (s[0], s[1]);
    let dh = d / nh;
    let qkv = layers::linear(g, p, &format!("{name}.qkv"), x)?;
    let q = g.slice(qkv, 1, 0, d)?;
    let k = g.slice(qkv, 1, d, d)?;
    let v = g.slice(qkv, 1, 2 * d, d)?;
    let q = g.reshape(q, &[n, nh, dh])?;
    let k = g.reshape(k, &[n, nh, dh])?;
    let v = g.reshape(v, &[n, nh, dh])?;
    let scores = g.einsum("nhe,mhe->hnm", q, k)?;
    let scores = g.scale(scores, cst(1.0 / (dh as f64).sqrt()))?;
    let attn = g.softmax(scores)?;
    let o = g.einsum("hnm,mhe->nhe", attn, v)?;
    let o = g.reshape(o, &[n, d])?;
    layers::linear(g, p, &format!("{name}.proj"), o)
}

pub(super) fn forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &Params<'_>,
    spec: &ModelSpec,
    grid: &GridSpec,
    input: Var,
) -> Result<Var> {
    let tokens = encode_variables(g, p, spec, input)?;
    let mut x = aggregate_variables(g, p, spec, tokens)?;
    if p.has("pos_embed") {
        x = g.add(x, p.get("pos_embed"))?;
    }
    for b in 0..spec.n_layers {
        let y = g.layer_norm(x)?;
        let y = self_attention(g, p, &format!("blocks.{b}.attn"), spec.n_heads, y)?;
        x = g.add(x, y)?;
        x = layers::mlp_residual(g, p, &format!("blocks.{b}.mlp"), x)?;
    }
    let mut y = g.layer_norm(x)?;
    for i in 0..spec.decoder_depth {
        y = layers::linear(g, p, &format!("decoder.{i}"), y)?;
        y = g.gelu(y)?;
    }
    let out = layers::linear(g, p, "head", y)?;
    layers::unpatchify(
        g,
        out,
        spec.n_prognostic,
        (grid.n_lat(), grid.n_lon()),
        spec.patch_size,
    )
}
