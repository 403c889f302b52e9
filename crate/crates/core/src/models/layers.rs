use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Params;
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

pub(crate) const INIT_STD: f64 = 0.02;

/// Collects parameters in creation order; values are drawn in f64 so a
/// seed yields the same model at either precision.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    entries: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Init {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            entries: Vec::new(),
        }
    }

    pub(crate) fn normal(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.truncated(name, shape, INIT_STD);
    }

    /// Normal truncated at two standard deviations.
    fn truncated(&mut self, name: impl Into<String>, shape: &[usize], std: f64) {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).unwrap();
        let data = (0..n)
            .map(|_| loop {
                let v: f64 = dist.sample(&mut self.rng);
                if v.abs() <= 2.0 * std {
                    break v;
                }
            })
            .collect();
        self.entries.push((name.into(), shape.to_vec(), data));
    }

    /// Weights with std `1/sqrt(fan_in)` so activations keep their scale
    /// at small widths.
    pub(crate) fn fan_in(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) {
        self.truncated(name, shape, 1.0 / (fan_in as f64).sqrt());
    }

    pub(crate) fn linear_fan_in(&mut self, name: &str, din: usize, dout: usize) {
        self.fan_in(format!("{name}.weight"), &[din, dout], din);
        self.zeros(format!("{name}.bias"), &[dout]);
    }

    pub(crate) fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        let n = shape.iter().product();
        self.entries.push((name.into(), shape.to_vec(), vec![0.0; n]));
    }

    pub(crate) fn linear(&mut self, name: &str, din: usize, dout: usize) {
        self.normal(format!("{name}.weight"), &[din, dout]);
        self.zeros(format!("{name}.bias"), &[dout]);
    }

    pub(crate) fn linear_zero(&mut self, name: &str, din: usize, dout: usize) {
        self.zeros(format!("{name}.weight"), &[din, dout]);
        self.zeros(format!("{name}.bias"), &[dout]);
    }

    pub(crate) fn mlp(&mut self, name: &str, d: usize, hidden: usize) {
        self.linear(&format!("{name}.fc1"), d, hidden);
        self.linear(&format!("{name}.fc2"), hidden, d);
    }

    pub(crate) fn finish<T: Scalar>(self) -> ParamStore<T> {
        let mut store = ParamStore::new();
        for (name, shape, data) in self.entries {
            store.push(name, Tensor::from_f64(shape, &data).expect("init shape"));
        }
        store
    }
}

/// `x W + b` on `[N, Din]` rows.
pub(crate) fn linear<T: Scalar>(g: &mut Graph<T>, p: &Params<'_>, name: &str, x: Var) -> Result<Var> {
    let y = g.matmul(x, p.get(&format!("{name}.weight")))?;
    g.add(y, p.get(&format!("{name}.bias")))
}

pub(crate) fn mlp<T: Scalar>(g: &mut Graph<T>, p: &Params<'_>, name: &str, x: Var) -> Result<Var> {
    let h = linear(g, p, &format!("{name}.fc1"), x)?;
    let h = g.gelu(h)?;
    linear(g, p, &format!("{name}.fc2"), h)
}

/// `x + MLP(LN(x))`.
pub(crate) fn mlp_residual<T: Scalar>(g: &mut Graph<T>, p: &Params<'_>, name: &str, x: Var) -> Result<Var> {
    let y = g.layer_norm(x)?;
    let y = mlp(g, p, name, y)?;
    g.add(x, y)
}

/// `[C, H, W]` to `[Hp Wp, C ph pw]` patch rows.
pub(crate) fn patchify<T: Scalar>(g: &mut Graph<T>, x: Var, patch: (usize, usize)) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (ph, pw) = patch;
    let (hp, wp) = (h / ph, w / pw);
    if patch == (1, 1) {
        let y = g.permute(x, &[1, 2, 0])?;
        return g.reshape(y, &[h * w, c]);
    }
    let y = g.reshape(x, &[c, hp, ph, wp, pw])?;
    let y = g.permute(y, &[1, 3, 0, 2, 4])?;
    g.reshape(y, &[hp * wp, c * ph * pw])
}

/// Inverse of [`patchify`] for `k` output channels.
pub(crate) fn unpatchify<T: Scalar>(
    g: &mut Graph<T>,
    y: Var,
    k: usize,
    grid: (usize, usize),
    patch: (usize, usize),
) -> Result<Var> {
    let (h, w) = grid;
    let (ph, pw) = patch;
    let (hp, wp) = (h / ph, w / pw);
    if patch == (1, 1) {
        let z = g.reshape(y, &[h, w, k])?;
        return g.permute(z, &[2, 0, 1]);
    }
    let z = g.reshape(y, &[hp, wp, k, ph, pw])?;
    let z = g.permute(z, &[2, 0, 3, 1, 4])?;
    g.reshape(z, &[k, h, w])
}

/// `[N, D]` tokens on an `h x w` lattice to `[D, h, w]`.
pub(crate) fn tokens_to_field<T: Scalar>(g: &mut Graph<T>, x: Var, h: usize, w: usize) -> Result<Var> {
    let d = g.shape(x)[1];
    let y = g.reshape(x, &[h, w, d])?;
    g.permute(y, &[2, 0, 1])
}

pub(crate) fn field_to_tokens<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let y = g.permute(x, &[1, 2, 0])?;
    g.reshape(y, &[s[1] * s[2], s[0]])
}

/// Complex weights `[P, I, O, 2]` as the real operator `[P, I, 2, O, 2]`
/// acting on `(re, im)` pairs.
pub(crate) fn realify<T: Scalar>(g: &mut Graph<T>, w: Var) -> Result<Var> {
    let s = g.shape(w).to_vec();
    let (pn, i, o) = (s[0], s[1], s[2]);
    let re = g.slice(w, 3, 0, 1)?;
    let im = g.slice(w, 3, 1, 1)?;
    let neg_im = g.scale(im, -T::one())?;
    let row_re = g.concat(&[re, im], 3)?;
    let row_im = g.concat(&[neg_im, re], 3)?;
    let row_re = g.reshape(row_re, &[pn, i, 1, o, 2])?;
    let row_im = g.reshape(row_im, &[pn, i, 1, o, 2])?;
    g.concat(&[row_re, row_im], 2)
}
