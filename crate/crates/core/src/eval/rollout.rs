//! Streaming autoregressive rollouts.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{compute_tisr, format_timestamp, step_duration, NormalizationStats, Timestamp};
use crate::error::{shape_err, Error, Result};
use crate::grid::{AreaWeights, GridSpec};
use crate::models::ModelState;
use crate::Scalar;

/// Magnitude in normalized units beyond which a state counts as blown up.
pub const BLOWUP_BOUND: f64 = 1e4;

pub fn detect_blowup<T: Scalar>(x: &[T]) -> bool {
    x.iter().any(|v| {
        let v = v.to_f64().unwrap_or(f64::NAN);
        !v.is_finite() || v.abs() > BLOWUP_BOUND
    })
}

/// A one-step map `X ↦ ΔX` on normalized fields.
pub trait Emulator<T: Scalar> {
    fn increment(&self, x: &Tensor<T>, f: &Tensor<T>, c: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar> Emulator<T> for ModelState<T> {
    fn increment(&self, x: &Tensor<T>, f: &Tensor<T>, c: &Tensor<T>) -> Result<Tensor<T>> {
        self.predict(x, f, c)
    }
}

/// Normalized forcing fields at a given time.
pub trait ForcingProvider<T: Scalar> {
    fn forcing(&self, t: &Timestamp) -> Result<Tensor<T>>;
}

/// TISR computed on demand, rounded to `f32` like the stored variable and
/// normalized with the training statistics.
pub struct TisrForcing<'a> {
    pub grid: &'a GridSpec,
    pub stats: &'a NormalizationStats,
}

impl<T: Scalar> ForcingProvider<T> for TisrForcing<'_> {
    fn forcing(&self, t: &Timestamp) -> Result<Tensor<T>> {
        let mut v: Vec<f32> = compute_tisr(t, self.grid).iter().map(|&x| x as f32).collect();
        self.stats.normalize("tisr", &mut v)?;
        Tensor::new(
            vec![1, self.grid.n_lat(), self.grid.n_lon()],
            v.iter().map(|&x| crate::scalar::cst::<T>(x as f64)).collect(),
        )
    }
}

/// Per-point running mean and population variance (Welford, `f64`).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMoments {
    pub variables: Vec<String>,
    pub n_points: usize,
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl FieldMoments {
    pub fn new(variables: Vec<String>, n_points: usize) -> Self {
        let n = variables.len() * n_points;
        Self {
            variables,
            n_points,
            count: 0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
        }
    }

    /// Adds one `[K][H][W]` state.
    pub fn push(&mut self, state: &[f64]) {
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for ((x, m), s) in state.iter().zip(&mut self.mean).zip(&mut self.m2) {
            let d = x - *m;
            *m += d * inv;
            *s += d * (x - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    pub fn stds(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2.iter().map(|s| (s / n).max(0.0).sqrt()).collect()
    }

    pub fn field(&self, k: usize) -> &[f64] {
        &self.mean[k * self.n_points..(k + 1) * self.n_points]
    }

    /// Rebuilds moments from stored means and stds of `count` states.
    pub fn from_parts(variables: Vec<String>, n_points: usize, count: usize, means: Vec<f64>, stds: &[f64]) -> Self {
        let m2 = stds.iter().map(|s| s * s * count as f64).collect();
        Self {
            variables,
            n_points,
            count,
            mean: means,
            m2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStats {
    pub grid: GridSpec,
    pub start: Timestamp,
    /// States requested, including the initial condition.
    pub n_steps: usize,
    pub moments: FieldMoments,
    /// Area-weighted global mean of every variable per accumulated state.
    pub timeseries: Vec<Vec<f64>>,
    pub finite: bool,
    pub first_nonfinite_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMeta {
    pub variables: Vec<String>,
    pub grid: GridSpec,
    pub start: Timestamp,
    pub n_steps: usize,
    pub steps_completed: usize,
    pub finite: bool,
    pub first_nonfinite_step: Option<usize>,
    pub blowup_bound: f64,
    /// Layout of `means.bin` and `stds.bin`.
    pub dtype: String,
}

fn write_f64_as_f32(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32_as_f64(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

impl RolloutStats {
    pub fn variables(&self) -> &[String] {
        &self.moments.variables
    }

    pub fn steps_completed(&self) -> usize {
        self.moments.count()
    }

    pub fn meta(&self) -> RolloutMeta {
        RolloutMeta {
            variables: self.variables().to_vec(),
            grid: self.grid.clone(),
            start: self.start,
            n_steps: self.n_steps,
            steps_completed: self.steps_completed(),
            finite: self.finite,
            first_nonfinite_step: self.first_nonfinite_step,
            blowup_bound: BLOWUP_BOUND,
            dtype: "f32le [variable][lat][lon]".into(),
        }
    }

    /// Writes `means.bin`, `stds.bin`, `timeseries.csv` and `meta.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_f64_as_f32(&dir.join("means.bin"), self.moments.means())?;
        write_f64_as_f32(&dir.join("stds.bin"), &self.moments.stds())?;
        let mut csv = String::from("step,time");
        for v in self.variables() {
            csv.push(',');
            csv.push_str(v);
        }
        csv.push('\n');
        for (i, row) in self.timeseries.iter().enumerate() {
            let t = self.start + step_duration() * i as i32;
            csv.push_str(&format!("{i},{}", format_timestamp(&t)));
            for v in row {
                csv.push_str(&format!(",{v:.6e}"));
            }
            csv.push('\n');
        }
        let mut f = fs::File::create(dir.join("timeseries.csv"))?;
        f.write_all(csv.as_bytes())?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta())?)?;
        Ok(())
    }

    /// Reads statistics written by [`RolloutStats::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: RolloutMeta = serde_json::from_str(
            &fs::read_to_string(dir.join("meta.json"))
                .map_err(|e| Error::Format(format!("cannot read rollout meta: {e}")))?,
        )?;
        let np = meta.grid.n_points();
        let n = meta.variables.len() * np;
        let means = read_f32_as_f64(&dir.join("means.bin"))?;
        let stds = read_f32_as_f64(&dir.join("stds.bin"))?;
        if means.len() != n || stds.len() != n {
            return Err(Error::Format("rollout arrays do not match meta.json".into()));
        }
        let text = fs::read_to_string(dir.join("timeseries.csv"))?;
        let mut timeseries = Vec::new();
        for line in text.lines().skip(1) {
            let row: Vec<f64> = line
                .split(',')
                .skip(2)
                .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("timeseries.csv: {e}"))))
                .collect::<Result<_>>()?;
            timeseries.push(row);
        }
        Ok(Self {
            grid: meta.grid,
            start: meta.start,
            n_steps: meta.n_steps,
            moments: FieldMoments::from_parts(meta.variables, np, meta.steps_completed, means, &stds),
            timeseries,
            finite: meta.finite,
            first_nonfinite_step: meta.first_nonfinite_step,
        })
    }
}

/// Iterates `X_{i+1} = X_i + f(X_i, F(t_i), C)` from the normalized `x0`
/// and accumulates, in physical units, the `n_steps` states
/// `X_0 … X_{n_steps-1}` at `start + i Δt`. Stops at the first state that
/// is non-finite or exceeds [`BLOWUP_BOUND`].
#[allow(clippy::too_many_arguments)]
pub fn rollout<T: Scalar>(
    model: &dyn Emulator<T>,
    x0: &Tensor<T>,
    forcing: &dyn ForcingProvider<T>,
    constants: &Tensor<T>,
    start: Timestamp,
    n_steps: usize,
    variables: &[String],
    stats: &NormalizationStats,
    grid: &GridSpec,
) -> Result<RolloutStats> {
    let np = grid.n_points();
    if x0.shape() != [variables.len(), grid.n_lat(), grid.n_lon()] {
        return Err(shape_err(
            "rollout",
            format!("initial state {:?} for {} variables", x0.shape(), variables.len()),
        ));
    }
    let scales: Vec<(f64, f64)> = variables
        .iter()
        .map(|v| stats.get(v).map(|s| (s.mean, s.std)))
        .collect::<Result<_>>()?;
    let weights: AreaWeights = grid.area_weights();
    let mut out = RolloutStats {
        grid: grid.clone(),
        start,
        n_steps,
        moments: FieldMoments::new(variables.to_vec(), np),
        timeseries: Vec::with_capacity(n_steps),
        finite: true,
        first_nonfinite_step: None,
    };
    let mut x = x0.clone();
    let mut phys = vec![0.0; variables.len() * np];
    for i in 0..n_steps {
        if detect_blowup(x.data()) {
            out.finite = false;
            out.first_nonfinite_step = Some(i);
            break;
        }
        for (k, &(mean, std)) in scales.iter().enumerate() {
            for (v, p) in phys[k * np..(k + 1) * np].iter_mut().zip(&x.data()[k * np..(k + 1) * np]) {
                *v = v_to_f64(*p) * std + mean;
            }
        }
        out.moments.push(&phys);
        out.timeseries.push(
            (0..variables.len())
                .map(|k| weights.mean(&phys[k * np..(k + 1) * np]))
                .collect::<Result<_>>()?,
        );
        if i + 1 == n_steps {
            break;
        }
        let t = start + step_duration() * i as i32;
        let f = forcing.forcing(&t)?;
        let dx = match model.increment(&x, &f, constants) {
            Ok(dx) => dx,
            Err(Error::NonFinite { .. }) => {
                out.finite = false;
                out.first_nonfinite_step = Some(i + 1);
                break;
            }
            Err(e) => return Err(e),
        };
        for (a, b) in x.data_mut().iter_mut().zip(dx.data()) {
            *a = *a + *b;
        }
    }
    Ok(out)
}

fn v_to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}
