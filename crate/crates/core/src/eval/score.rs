//! Stability scores: area-weighted RMSE between temporal statistics.

use serde::{Deserialize, Serialize};

use super::rollout::{FieldMoments, RolloutStats};
use crate::autodiff::Tensor;
use crate::data::{normalized_constants, DatasetStore, NormalizationStats, TimeRange, Timestamp, VariableSet};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::Scalar;

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod float_or_marker {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn to_repr(v: f64) -> serde_json::Value {
        if v.is_finite() {
            serde_json::json!(v)
        } else if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    }

    pub fn parse(s: &str) -> Option<f64> {
        match s {
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            _ => None,
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => parse(&t).ok_or_else(|| serde::de::Error::custom(format!("bad float marker '{t}'"))),
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(|r| match r {
                    Repr::Num(v) => Ok(v),
                    Repr::Text(t) => parse(&t).ok_or_else(|| serde::de::Error::custom(format!("bad float marker '{t}'"))),
                })
                .collect()
        }
    }
}

/// Which temporal statistic is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Mean,
    Std,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableScore {
    pub name: String,
    /// In units of the training standard deviation.
    #[serde(with = "float_or_marker")]
    pub rmse: f64,
    #[serde(with = "float_or_marker")]
    pub rmse_physical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mode: ScoreMode,
    pub variables: Vec<VariableScore>,
    pub evaluation_subset: Vec<String>,
    /// Unweighted mean of the normalized RMSEs over `evaluation_subset`.
    #[serde(with = "float_or_marker")]
    pub rmse: f64,
    pub finite: bool,
    #[serde(default)]
    pub first_nonfinite_step: Option<usize>,
    /// Aggregate climatology score in the same mode, when computed.
    #[serde(default)]
    pub baseline: Option<f64>,
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

impl ScoreReport {
    pub fn variable(&self, name: &str) -> Option<&VariableScore> {
        self.variables.iter().find(|v| v.name == name)
    }
}

/// Per-point temporal moments of `variables` over `range`, read from disk
/// one year at a time.
pub fn reference_moments(store: &DatasetStore, range: &TimeRange, variables: &[String]) -> Result<FieldMoments> {
    if !store.time_range().contains_range(range) {
        return Err(Error::Range(format!(
            "reference {}..{} is not covered by the dataset",
            crate::data::format_timestamp(&range.start),
            crate::data::format_timestamp(&range.end)
        )));
    }
    let np = store.grid().n_points();
    let k = variables.len();
    let mut mean = vec![0.0f64; k * np];
    let mut m2 = vec![0.0f64; k * np];
    let first = store.step_of(&range.start)?;
    let total = range.n_steps();
    const CHUNK: usize = 1461;
    for (vi, name) in variables.iter().enumerate() {
        let (mean, m2) = (&mut mean[vi * np..(vi + 1) * np], &mut m2[vi * np..(vi + 1) * np]);
        let mut done = 0;
        while done < total {
            let n = CHUNK.min(total - done);
            let values = store.read_steps(name, first + done, n)?;
            for step in values.chunks_exact(np) {
                done += 1;
                let inv = 1.0 / done as f64;
                for ((x, m), s) in step.iter().zip(mean.iter_mut()).zip(m2.iter_mut()) {
                    let x = *x as f64;
                    let d = x - *m;
                    *m += d * inv;
                    *s += d * (x - *m);
                }
            }
        }
    }
    let stds: Vec<f64> = m2.iter().map(|s| (s / total as f64).max(0.0).sqrt()).collect();
    Ok(FieldMoments::from_parts(variables.to_vec(), np, total, mean, &stds))
}

/// Scores every variable of `pred` against the same-named field of
/// `reference`: `sqrt((1/(HW)) Σ_h a_h Σ_w (p − t)²)`, divided by the
/// training std for the normalized value.
pub fn score_moments(
    pred: &FieldMoments,
    reference: &FieldMoments,
    norm: &NormalizationStats,
    grid: &GridSpec,
    evaluation_subset: &[String],
    mode: ScoreMode,
) -> Result<ScoreReport> {
    let np = grid.n_points();
    if pred.n_points != np || reference.n_points != np {
        return Err(Error::Config("statistics do not match the grid".into()));
    }
    let weights = grid.area_weights();
    let pick = |m: &FieldMoments| match mode {
        ScoreMode::Mean => m.means().to_vec(),
        ScoreMode::Std => m.stds(),
    };
    let (pv, rv) = (pick(pred), pick(reference));
    let mut variables = Vec::with_capacity(pred.variables.len());
    for (k, name) in pred.variables.iter().enumerate() {
        let j = reference
            .variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::Config(format!("reference lacks variable '{name}'")))?;
        let p = &pv[k * np..(k + 1) * np];
        let t = &rv[j * np..(j + 1) * np];
        let sq: Vec<f64> = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).collect();
        let rmse_physical = weights.mean(&sq)?.sqrt();
        let std = norm.get(name)?.std;
        variables.push(VariableScore {
            name: name.clone(),
            rmse: rmse_physical / std,
            rmse_physical,
        });
    }
    let rmse = aggregate(&variables, evaluation_subset)?;
    Ok(ScoreReport {
        mode,
        variables,
        evaluation_subset: evaluation_subset.to_vec(),
        rmse,
        finite: true,
        first_nonfinite_step: None,
        baseline: None,
        run_id: None,
        seed: None,
        config: None,
    })
}

fn aggregate(variables: &[VariableScore], subset: &[String]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Config("evaluation subset is empty".into()));
    }
    let mut acc = 0.0;
    for name in subset {
        let v = variables
            .iter()
            .find(|v| &v.name == name)
            .ok_or_else(|| Error::Config(format!("evaluation variable '{name}' was not scored")))?;
        acc += v.rmse;
    }
    Ok(acc / subset.len() as f64)
}

fn infinite_report(stats: &RolloutStats, subset: &[String], mode: ScoreMode) -> ScoreReport {
    ScoreReport {
        mode,
        variables: stats
            .variables()
            .iter()
            .map(|n| VariableScore {
                name: n.clone(),
                rmse: f64::INFINITY,
                rmse_physical: f64::INFINITY,
            })
            .collect(),
        evaluation_subset: subset.to_vec(),
        rmse: f64::INFINITY,
        finite: false,
        first_nonfinite_step: stats.first_nonfinite_step,
        baseline: None,
        run_id: None,
        seed: None,
        config: None,
    }
}

/// Period covered by the states of a rollout.
pub fn rollout_period(stats: &RolloutStats) -> Result<TimeRange> {
    TimeRange::from_steps(stats.start, stats.n_steps)
}

/// Scores a rollout against the reference statistics over its period.
/// Blown-up rollouts score `inf`.
pub fn stability_score(
    stats: &RolloutStats,
    reference: &DatasetStore,
    norm: &NormalizationStats,
    variable_set: &VariableSet,
    mode: ScoreMode,
) -> Result<ScoreReport> {
    let moments = reference_moments(reference, &rollout_period(stats)?, stats.variables())?;
    score_rollout(stats, &moments, norm, variable_set, mode)
}

/// [`stability_score`] against precomputed reference moments.
pub fn score_rollout(
    stats: &RolloutStats,
    reference: &FieldMoments,
    norm: &NormalizationStats,
    variable_set: &VariableSet,
    mode: ScoreMode,
) -> Result<ScoreReport> {
    if reference.n_points != stats.grid.n_points() {
        return Err(Error::Config("reference grid differs from the rollout grid".into()));
    }
    if reference.count() != stats.n_steps {
        return Err(Error::Range(format!(
            "reference covers {} states, rollout period has {}",
            reference.count(),
            stats.n_steps
        )));
    }
    let subset = &variable_set.evaluation_subset;
    if !stats.finite {
        return Ok(infinite_report(stats, subset, mode));
    }
    score_moments(&stats.moments, reference, norm, &stats.grid, subset, mode)
}

/// Scores the training-period temporal statistic as a constant prediction
/// of the evaluation-period statistic.
pub fn climatology_baseline(
    train_store: &DatasetStore,
    train_range: &TimeRange,
    eval_store: &DatasetStore,
    eval_range: &TimeRange,
    norm: &NormalizationStats,
    variable_set: &VariableSet,
    mode: ScoreMode,
) -> Result<ScoreReport> {
    if train_store.grid() != eval_store.grid() {
        return Err(Error::Config("training and evaluation stores use different grids".into()));
    }
    let vars = &variable_set.prognostic;
    let pred = reference_moments(train_store, train_range, vars)?;
    let reference = reference_moments(eval_store, eval_range, vars)?;
    score_moments(&pred, &reference, norm, train_store.grid(), &variable_set.evaluation_subset, mode)
}

/// Statistics across seeds over the finite scores only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub n_seeds: usize,
    pub finite_count: usize,
    /// `None` when no seed is finite.
    pub mean: Option<f64>,
    /// Population std; `None` when no seed is finite.
    pub std: Option<f64>,
    #[serde(with = "float_or_marker::vec")]
    pub per_seed: Vec<f64>,
    /// Positions of the non-finite seeds in `per_seed`.
    pub nonfinite: Vec<usize>,
}

pub fn aggregate_seeds(scores: &[f64]) -> SeedAggregate {
    let finite: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
    let n = finite.len();
    let (mean, std) = if n == 0 {
        (None, None)
    } else {
        let m = finite.iter().sum::<f64>() / n as f64;
        let v = finite.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / n as f64;
        (Some(m), Some(v.sqrt()))
    };
    SeedAggregate {
        n_seeds: scores.len(),
        finite_count: n,
        mean,
        std,
        per_seed: scores.to_vec(),
        nonfinite: scores
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_finite())
            .map(|(i, _)| i)
            .collect(),
    }
}

/// [`aggregate_seeds`] over reports that must share one configuration
/// apart from the seed.
pub fn aggregate_reports(reports: &[ScoreReport]) -> Result<SeedAggregate> {
    let strip = |r: &ScoreReport| {
        r.config.clone().map(|mut c| {
            if let Some(o) = c.as_object_mut() {
                o.remove("seed");
            }
            c
        })
    };
    if let Some(first) = reports.first() {
        let key = strip(first);
        if reports.iter().any(|r| strip(r) != key || r.mode != first.mode) {
            return Err(Error::Config("score reports come from different configurations".into()));
        }
    }
    Ok(aggregate_seeds(&reports.iter().map(|r| r.rmse).collect::<Vec<_>>()))
}

/// Normalized prognostic state and constants at `t`, as rollout inputs.
pub fn initial_condition<T: Scalar>(
    store: &DatasetStore,
    norm: &NormalizationStats,
    t: &Timestamp,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let grid = store.grid();
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let step = store.step_of(t)?;
    let manifest = store.manifest();
    let mut x = Vec::with_capacity(manifest.prognostic.len() * h * w);
    for name in &manifest.prognostic {
        let mut v = store.read_steps(name, step, 1)?;
        norm.normalize(name, &mut v)?;
        x.extend_from_slice(&v);
    }
    let c = normalized_constants(store, norm)?;
    let cast = |v: &[f32]| v.iter().map(|&a| crate::scalar::cst::<T>(a as f64)).collect::<Vec<T>>();
    Ok((
        Tensor::new(vec![manifest.prognostic.len(), h, w], cast(&x))?,
        Tensor::new(vec![manifest.constants.len(), h, w], cast(&c))?,
    ))
}
