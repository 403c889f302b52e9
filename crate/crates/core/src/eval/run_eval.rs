//! End-to-end evaluation of a trained run: rollout, scores and artifacts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rollout::{rollout, Emulator, RolloutStats, TisrForcing, BLOWUP_BOUND};
use super::score::{float_or_marker, initial_condition, reference_moments, score_moments, score_rollout};
use super::score::{rollout_period, ScoreMode, ScoreReport};
use crate::data::{DatasetStore, NormalizationStats, TimeRange, Timestamp, FORCINGS};
use crate::error::{Error, Result};
use crate::models::ModelState;
use crate::train::TrainConfig;
use crate::Scalar;

/// Contents of `score.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub run_id: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub start: Timestamp,
    pub n_steps: usize,
    pub finite: bool,
    pub first_nonfinite_step: Option<usize>,
    pub blowup_bound: f64,
    /// Aggregate normalized mean-state RMSE.
    #[serde(with = "float_or_marker")]
    pub rmse: f64,
    /// Aggregate normalized std-state RMSE.
    #[serde(with = "float_or_marker")]
    pub rmse_std: f64,
    #[serde(with = "float_or_marker")]
    pub climatology_rmse: f64,
    pub mean: ScoreReport,
    pub std: ScoreReport,
    pub climatology: ScoreReport,
    pub climatology_std: ScoreReport,
}

impl ScoreFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Run configuration and normalization read back from a run directory.
pub fn load_run_inputs(run_dir: &Path) -> Result<(TrainConfig, NormalizationStats)> {
    let read = |name: &str| {
        fs::read_to_string(run_dir.join(name))
            .map_err(|_| Error::Config(format!("{} has no {name}", run_dir.display())))
    };
    Ok((serde_json::from_str(&read("config.json")?)?, serde_json::from_str(&read("stats.json")?)?))
}

/// Rollout of `model` from `start` in `reference`, scored in both modes
/// together with the climatology of `cfg.train_range` in `train_store`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<T: Scalar>(
    model: &dyn Emulator<T>,
    run_id: &str,
    cfg: &TrainConfig,
    norm: &NormalizationStats,
    reference: &DatasetStore,
    train_store: &DatasetStore,
    start: Timestamp,
    n_steps: usize,
) -> Result<(RolloutStats, ScoreFile)> {
    let vars = &cfg.variable_set;
    let manifest = reference.manifest();
    if manifest.prognostic != vars.prognostic || manifest.constants != vars.constants {
        return Err(Error::Config("reference dataset variables differ from the run's variable set".into()));
    }
    if vars.forcings != FORCINGS {
        return Err(Error::Config("rollouts compute TISR and support no other forcing".into()));
    }
    if reference.grid() != train_store.grid() {
        return Err(Error::Config("training and reference stores use different grids".into()));
    }
    if n_steps == 0 {
        return Err(Error::Config("rollout needs at least one step".into()));
    }
    let period = TimeRange::from_steps(start, n_steps)?;
    if !reference.time_range().contains_range(&period) {
        return Err(Error::Range("reference dataset does not cover the rollout period".into()));
    }
    let (x0, c) = initial_condition::<T>(reference, norm, &start)?;
    let forcing = TisrForcing {
        grid: reference.grid(),
        stats: norm,
    };
    let stats = rollout(model, &x0, &forcing, &c, start, n_steps, &vars.prognostic, norm, reference.grid())?;
    let ref_moments = reference_moments(reference, &rollout_period(&stats)?, &vars.prognostic)?;
    let clim_moments = reference_moments(train_store, &cfg.train_range, &vars.prognostic)?;
    let clim = |mode| score_moments(&clim_moments, &ref_moments, norm, reference.grid(), &vars.evaluation_subset, mode);
    let mut climatology = clim(ScoreMode::Mean)?;
    let mut climatology_std = clim(ScoreMode::Std)?;
    let config = serde_json::to_value(cfg)?;
    let tag = |mut r: ScoreReport, baseline: f64| {
        r.baseline = Some(baseline);
        r.run_id = Some(run_id.to_string());
        r.seed = Some(cfg.seed);
        r.config = Some(config.clone());
        r
    };
    let mean = tag(score_rollout(&stats, &ref_moments, norm, vars, ScoreMode::Mean)?, climatology.rmse);
    let std = tag(score_rollout(&stats, &ref_moments, norm, vars, ScoreMode::Std)?, climatology_std.rmse);
    climatology.run_id = Some(run_id.to_string());
    climatology_std.run_id = Some(run_id.to_string());
    let file = ScoreFile {
        run_id: run_id.to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        start,
        n_steps,
        finite: stats.finite,
        first_nonfinite_step: stats.first_nonfinite_step,
        blowup_bound: BLOWUP_BOUND,
        rmse: mean.rmse,
        rmse_std: std.rmse,
        climatology_rmse: climatology.rmse,
        mean,
        std,
        climatology,
        climatology_std,
    };
    Ok((stats, file))
}

/// Loads `checkpoint` from `run_dir`, evaluates it and writes `rollout/`
/// and `score.json` into the run directory.
pub fn evaluate_run(
    run_dir: &Path,
    checkpoint: &str,
    reference: &DatasetStore,
    train_store: &DatasetStore,
    start: Timestamp,
    n_steps: usize,
) -> Result<ScoreFile> {
    let (cfg, norm) = load_run_inputs(run_dir)?;
    let path = run_dir.join(checkpoint);
    if !path.exists() {
        return Err(Error::Config(format!("{} has no {checkpoint}", run_dir.display())));
    }
    let (model, meta) = ModelState::<f32>::load(&path)?;
    if model.spec() != &cfg.model {
        return Err(Error::Format("checkpoint model differs from config.json".into()));
    }
    let run_id = meta
        .get("run_id")
        .and_then(|v| v.as_str())
        .map(String::from)
        .or_else(|| run_dir.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_default();
    let (stats, file) = evaluate::<f32>(&model, &run_id, &cfg, &norm, reference, train_store, start, n_steps)?;
    stats.save(&run_dir.join("rollout"))?;
    fs::write(run_dir.join("score.json"), serde_json::to_string_pretty(&file)?)?;
    Ok(file)
}
