//! Spherical harmonics transform on the equiangular cell-center grid.
//!
//! Coefficients use the orthonormal convention: a unit constant field has
//! `a_00 = √(4π)`. Real fields are represented by `0 <= m <= mmax` only; the
//! inverse doubles every `m > 0` term.
//!
//! Coefficient tensors are laid out `[C, mmax+1, lmax+1, 2]`; entries with
//! `l < m` are structurally zero.

use std::f64::consts::PI;

use super::legendre::{fejer_weights, normalized_legendre};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::grid::GridSpec;
use crate::scalar::{cst, Scalar};

#[derive(Debug, Clone)]
pub struct ShtPlan<T: Scalar> {
    grid: GridSpec,
    lmax: usize,
    mmax: usize,
    /// `P̄_l^m(sin φ_h)` as `[m][l][h]`.
    legendre: Vec<f64>,
    quadrature: Vec<f64>,
    analysis: Tensor<T>,
    synthesis: Tensor<T>,
}

/// Largest degree for which the plan's quadrature integrates every product
/// `P̄_l^m P̄_l'^m` exactly (`l + l' <= H - 1`).
pub fn lmax_exact(n_lat: usize) -> usize {
    (n_lat - 1) / 2
}

impl<T: Scalar> ShtPlan<T> {
    /// Retains `lmax = floor(f (H-1))` and `mmax = floor(f W/2)`, clipped to
    /// `lmax` and kept below the Nyquist order `W/2`.
    pub fn new(grid: &GridSpec, hard_threshold_fraction: f64) -> Result<Self> {
        let f = hard_threshold_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!(
                "hard threshold fraction {f} must lie in (0, 1]"
            )));
        }
        let (w, h) = (grid.n_lon(), grid.n_lat());
        let lmax = (f * (h - 1) as f64).floor() as usize;
        let mut mmax = ((f * (w / 2) as f64).floor() as usize).min(lmax);
        if mmax >= w / 2 {
            mmax = w / 2 - 1;
        }
        Self::with_truncation(grid, lmax, mmax)
    }

    pub fn with_truncation(grid: &GridSpec, lmax: usize, mmax: usize) -> Result<Self> {
        let (w, h) = (grid.n_lon(), grid.n_lat());
        if lmax > h - 1 || mmax > lmax || mmax >= w / 2 {
            return Err(Error::Config(format!(
                "truncation lmax={lmax}, mmax={mmax} not resolvable on a {w}x{h} grid"
            )));
        }
        let fejer = fejer_weights(h);
        let quadrature: Vec<f64> = fejer.iter().map(|v| 2.0 * PI * v).collect();
        let (nm, nl) = (mmax + 1, lmax + 1);
        let mut legendre = vec![0.0; nm * nl * h];
        for (hi, lat) in grid.latitudes().iter().enumerate() {
            let phi = lat.to_radians();
            let p = normalized_legendre(lmax, mmax, phi.sin(), phi.cos());
            for m in 0..nm {
                for l in m..nl {
                    legendre[(m * nl + l) * h + hi] = p[m][l];
                }
            }
        }
        let wf = w as f64;
        let analysis: Vec<T> = legendre
            .iter()
            .enumerate()
            .map(|(i, p)| cst(p * quadrature[i % h] / wf))
            .collect();
        let synthesis: Vec<T> = legendre.iter().map(|p| cst(p * wf)).collect();
        Ok(Self {
            grid: grid.clone(),
            lmax,
            mmax,
            analysis: Tensor::new(vec![nm, nl, h], analysis)?,
            synthesis: Tensor::new(vec![nm, nl, h], synthesis)?,
            legendre,
            quadrature,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn mmax(&self) -> usize {
        self.mmax
    }

    pub fn lmax_exact(&self) -> usize {
        lmax_exact(self.grid.n_lat()).min(self.lmax)
    }

    /// Per-latitude weights `q_h` with `Σ_h q_h P̄_l^m P̄_l'^m ≈ δ_ll'`.
    pub fn quadrature_weights(&self) -> &[f64] {
        &self.quadrature
    }

    pub fn legendre(&self, l: usize, m: usize, h: usize) -> f64 {
        let nl = self.lmax + 1;
        self.legendre[(m * nl + l) * self.grid.n_lat() + h]
    }

    /// `∫ f dΩ / 4π` using the transform's own quadrature.
    pub fn quadrature_mean(&self, field: &[f64]) -> Result<f64> {
        let (w, h) = (self.grid.n_lon(), self.grid.n_lat());
        if field.len() != w * h {
            return Err(shape_err("quadrature_mean", format!("{} values", field.len())));
        }
        let mut acc = 0.0;
        for (row, q) in field.chunks_exact(w).zip(&self.quadrature) {
            acc += q * row.iter().sum::<f64>() / w as f64;
        }
        Ok(acc / (4.0 * PI))
    }

    fn check_field(&self, shape: &[usize]) -> Result<usize> {
        let (w, h) = (self.grid.n_lon(), self.grid.n_lat());
        let n = shape.len();
        if n < 2 || shape[n - 1] != w || shape[n - 2] != h {
            return Err(shape_err(
                "sht_forward",
                format!("field {:?} does not end in [{h}, {w}]", shape),
            ));
        }
        Ok(shape[..n - 2].iter().product())
    }

    /// `[..., H, W]` real fields to `[C, mmax+1, lmax+1, 2]` coefficients,
    /// with the leading axes flattened into `C`.
    pub fn forward(&self, g: &mut Graph<T>, field: Var) -> Result<Var> {
        let c = self.check_field(g.shape(field))?;
        let (w, h) = (self.grid.n_lon(), self.grid.n_lat());
        let x = g.reshape(field, &[c, h, w])?;
        let spec = g.rfft(x)?;
        let spec = g.slice(spec, 2, 0, self.mmax + 1)?;
        let table = g.constant(self.analysis.clone());
        g.einsum("mlh,chmr->cmlr", table, spec)
    }

    /// `[C, mmax+1, lmax+1, 2]` coefficients to `[C, H, W]` real fields.
    pub fn inverse(&self, g: &mut Graph<T>, coeffs: Var) -> Result<Var> {
        let s = g.shape(coeffs).to_vec();
        if s.len() != 4 || s[1] != self.mmax + 1 || s[2] != self.lmax + 1 || s[3] != 2 {
            return Err(shape_err(
                "sht_inverse",
                format!(
                    "coefficients {:?} do not match [C, {}, {}, 2]",
                    s,
                    self.mmax + 1,
                    self.lmax + 1
                ),
            ));
        }
        let (w, h) = (self.grid.n_lon(), self.grid.n_lat());
        let c = s[0];
        let table = g.constant(self.synthesis.clone());
        let rows = g.einsum("mlh,cmlr->chmr", table, coeffs)?;
        let nf = w / 2 + 1;
        let pad = nf - (self.mmax + 1);
        let rows = if pad > 0 {
            let z = g.constant(Tensor::zeros(vec![c, h, pad, 2]));
            g.concat(&[rows, z], 2)?
        } else {
            rows
        };
        g.irfft(rows, w)
    }

    /// Non-differentiable convenience wrapper around [`ShtPlan::forward`].
    pub fn analyse(&self, field: &Tensor<T>) -> Result<SpectralCoeffs<T>> {
        let mut g = Graph::new();
        let x = g.constant(field.clone());
        let a = self.forward(&mut g, x)?;
        Ok(SpectralCoeffs {
            lmax: self.lmax,
            mmax: self.mmax,
            data: g.value(a).clone(),
        })
    }

    pub fn synthesise(&self, coeffs: &SpectralCoeffs<T>) -> Result<Tensor<T>> {
        if coeffs.lmax != self.lmax || coeffs.mmax != self.mmax {
            return Err(shape_err(
                "sht_inverse",
                format!(
                    "coefficients truncated at ({}, {}) but plan uses ({}, {})",
                    coeffs.lmax, coeffs.mmax, self.lmax, self.mmax
                ),
            ));
        }
        let mut g = Graph::new();
        let a = g.constant(coeffs.data.clone());
        let f = self.inverse(&mut g, a)?;
        Ok(g.value(f).clone())
    }
}

/// Per-channel complex coefficients `a_lm`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs<T> {
    lmax: usize,
    mmax: usize,
    data: Tensor<T>,
}

impl<T: Scalar> SpectralCoeffs<T> {
    pub fn zeros(channels: usize, lmax: usize, mmax: usize) -> Self {
        Self {
            lmax,
            mmax,
            data: Tensor::zeros(vec![channels, mmax + 1, lmax + 1, 2]),
        }
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn mmax(&self) -> usize {
        self.mmax
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    fn offset(&self, c: usize, l: usize, m: usize) -> usize {
        assert!(m <= self.mmax && l <= self.lmax && m <= l, "index ({l}, {m}) outside truncation");
        ((c * (self.mmax + 1) + m) * (self.lmax + 1) + l) * 2
    }

    /// `(re, im)` of `a_lm` for channel `c`.
    pub fn get(&self, c: usize, l: usize, m: usize) -> (T, T) {
        let o = self.offset(c, l, m);
        (self.data.data()[o], self.data.data()[o + 1])
    }

    pub fn set(&mut self, c: usize, l: usize, m: usize, re: T, im: T) {
        let o = self.offset(c, l, m);
        self.data.data_mut()[o] = re;
        self.data.data_mut()[o + 1] = im;
    }

    /// Iterates `(c, l, m)` over every valid index.
    pub fn indices(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (lmax, mmax) = (self.lmax, self.mmax);
        (0..self.channels()).flat_map(move |c| {
            (0..=mmax).flat_map(move |m| (m..=lmax).map(move |l| (c, l, m)))
        })
    }
}
