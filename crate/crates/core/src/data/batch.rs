//! Normalized training windows.

use super::calendar::{format_timestamp, step_duration, TimeRange, Timestamp};
use super::stats::NormalizationStats;
use super::store::DatasetStore;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

/// `x` holds `M + 1` prognostic states, `f` the forcings at the `M` input
/// times and `c` the constants, all `[K][H][W]` and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<T> {
    pub t0: Timestamp,
    pub x: Vec<Tensor<T>>,
    pub f: Vec<Tensor<T>>,
    pub c: Tensor<T>,
}

fn cast_tensor<T: Scalar>(shape: Vec<usize>, values: &[f32]) -> Result<Tensor<T>> {
    Tensor::new(shape, values.iter().map(|&v| crate::scalar::cst::<T>(v as f64)).collect())
}

/// Normalized constants `[K_c][H][W]`.
pub fn normalized_constants(store: &DatasetStore, stats: &NormalizationStats) -> Result<Vec<f32>> {
    let mut values = store.read_constants()?;
    let np = store.grid().n_points();
    for (i, name) in store.manifest().constants.iter().enumerate() {
        stats.normalize(name, &mut values[i * np..(i + 1) * np])?;
    }
    Ok(values)
}

/// Reads one window per timestamp directly from the store.
pub fn load_batch<T: Scalar>(
    store: &DatasetStore,
    stats: &NormalizationStats,
    timestamps: &[Timestamp],
    m: usize,
) -> Result<Vec<Window<T>>> {
    if m == 0 {
        return Err(Error::Config("window needs at least one step".into()));
    }
    let grid = store.grid();
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let consts = normalized_constants(store, stats)?;
    let manifest = store.manifest();
    let c = cast_tensor(vec![manifest.constants.len(), h, w], &consts)?;
    let mut out = Vec::with_capacity(timestamps.len());
    for t in timestamps {
        let last = *t + step_duration() * m as i32;
        if !store.time_range().contains(&last) {
            return Err(Error::Range(format!(
                "window {} + {m} steps leaves the dataset",
                format_timestamp(t)
            )));
        }
        let s0 = store.step_of(t)?;
        let read = |names: &[String], n: usize| -> Result<Vec<Vec<f32>>> {
            let mut per_var = Vec::with_capacity(names.len());
            for name in names {
                let mut v = store.read_steps(name, s0, n)?;
                stats.normalize(name, &mut v)?;
                per_var.push(v);
            }
            Ok(per_var)
        };
        let prog = read(&manifest.prognostic, m + 1)?;
        let forc = read(&manifest.forcings, m)?;
        let gather = |vars: &[Vec<f32>], step: usize| -> Result<Tensor<T>> {
            let np = h * w;
            let mut buf = Vec::with_capacity(vars.len() * np);
            for v in vars {
                buf.extend_from_slice(&v[step * np..(step + 1) * np]);
            }
            cast_tensor(vec![vars.len(), h, w], &buf)
        };
        out.push(Window {
            t0: *t,
            x: (0..=m).map(|i| gather(&prog, i)).collect::<Result<_>>()?,
            f: (0..m).map(|i| gather(&forc, i)).collect::<Result<_>>()?,
            c: c.clone(),
        });
    }
    Ok(out)
}

/// A contiguous normalized slice of the dataset held in memory, stored
/// step-major as `[step][K][H][W]`.
#[derive(Debug, Clone)]
pub struct NormalizedSeries {
    range: TimeRange,
    shape: (usize, usize),
    n_prognostic: usize,
    n_forcing: usize,
    prognostic: Vec<f32>,
    forcing: Vec<f32>,
    constants: Vec<f32>,
}

impl NormalizedSeries {
    pub fn load(store: &DatasetStore, stats: &NormalizationStats, range: &TimeRange) -> Result<Self> {
        if !store.time_range().contains_range(range) {
            return Err(Error::Range(format!(
                "range {} .. {} outside the dataset",
                format_timestamp(&range.start),
                format_timestamp(&range.end)
            )));
        }
        let grid = store.grid();
        let np = grid.n_points();
        let n = range.n_steps();
        let s0 = store.step_of(&range.start)?;
        let manifest = store.manifest();
        let interleave = |names: &[String]| -> Result<Vec<f32>> {
            let k = names.len();
            let mut out = vec![0f32; n * k * np];
            for (kk, name) in names.iter().enumerate() {
                let mut v = store.read_steps(name, s0, n)?;
                stats.normalize(name, &mut v)?;
                for s in 0..n {
                    let dst = (s * k + kk) * np;
                    out[dst..dst + np].copy_from_slice(&v[s * np..(s + 1) * np]);
                }
            }
            Ok(out)
        };
        Ok(Self {
            range: *range,
            shape: (grid.n_lat(), grid.n_lon()),
            n_prognostic: manifest.prognostic.len(),
            n_forcing: manifest.forcings.len(),
            prognostic: interleave(&manifest.prognostic)?,
            forcing: interleave(&manifest.forcings)?,
            constants: normalized_constants(store, stats)?,
        })
    }

    pub fn range(&self) -> &TimeRange {
        &self.range
    }

    fn step_of(&self, t: &Timestamp) -> Result<usize> {
        if !self.range.contains(t) {
            return Err(Error::Range(format!("{} outside the loaded series", format_timestamp(t))));
        }
        Ok(super::calendar::steps_between(&self.range.start, t) as usize)
    }

    fn slice<T: Scalar>(&self, data: &[f32], k: usize, step: usize) -> Result<Tensor<T>> {
        let np = self.shape.0 * self.shape.1;
        cast_tensor(vec![k, self.shape.0, self.shape.1], &data[step * k * np..(step + 1) * k * np])
    }

    pub fn prognostic<T: Scalar>(&self, t: &Timestamp) -> Result<Tensor<T>> {
        let s = self.step_of(t)?;
        self.slice(&self.prognostic, self.n_prognostic, s)
    }

    pub fn forcing<T: Scalar>(&self, t: &Timestamp) -> Result<Tensor<T>> {
        let s = self.step_of(t)?;
        self.slice(&self.forcing, self.n_forcing, s)
    }

    pub fn constants<T: Scalar>(&self) -> Result<Tensor<T>> {
        let k = self.constants.len() / (self.shape.0 * self.shape.1);
        cast_tensor(vec![k, self.shape.0, self.shape.1], &self.constants)
    }

    pub fn window<T: Scalar>(&self, t0: &Timestamp, m: usize) -> Result<Window<T>> {
        let s0 = self.step_of(t0)?;
        if s0 + m >= self.range.n_steps() {
            return Err(Error::Range(format!(
                "window {} + {m} steps leaves the loaded series",
                format_timestamp(t0)
            )));
        }
        Ok(Window {
            t0: *t0,
            x: (0..=m)
                .map(|i| self.slice(&self.prognostic, self.n_prognostic, s0 + i))
                .collect::<Result<_>>()?,
            f: (0..m)
                .map(|i| self.slice(&self.forcing, self.n_forcing, s0 + i))
                .collect::<Result<_>>()?,
            c: self.constants()?,
        })
    }
}
