//! Experiment configuration file with replication defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rsl_core::data::{SyntheticConfig, TimeRange, VariableSet};
use rsl_core::models::{Arch, SpecMode};
use rsl_core::train::{AdamConfig, ModelOverrides, SweepSpec, TrainSettings, REPLICATION_SEEDS};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfigFile {
    pub dataset: DatasetSection,
    pub variable_set: VariableSetSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub sweep: SweepSection,
    pub rollout: RolloutSection,
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Training dataset directory.
    pub path: Option<PathBuf>,
    /// Generator settings for `gen-data`.
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariableSetSection {
    /// `vars8` or `vars33`.
    pub preset: Option<String>,
    /// First `K` prognostic variables of `vars8`, or a preset size.
    pub n_prognostic: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub arch: Option<Arch>,
    pub n_layers: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub overrides: ModelOverrides,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub mode: Option<SpecMode>,
    pub m_steps: Option<usize>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub lr_init: Option<f64>,
    pub epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub grad_clip_norm: Option<f64>,
    pub adam: Option<AdamConfig>,
    pub train_range: Option<TimeRange>,
    pub val_range: Option<TimeRange>,
    pub max_train_samples: Option<usize>,
    pub max_val_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub archs: Option<Vec<Arch>>,
    pub n_prognostic: Option<Vec<usize>>,
    pub m_steps: Option<Vec<usize>>,
    pub n_layers: Option<Vec<usize>>,
    pub hidden_dims: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutSection {
    /// First rollout time; defaults to the step after the validation range.
    pub start: Option<String>,
    pub steps: Option<usize>,
    /// Calendar years from `start`; used when `steps` is absent. Default 10.
    pub years: Option<u32>,
    pub checkpoint: Option<String>,
    pub reference: Option<PathBuf>,
    /// Roll out every trained run at the end of `sweep`.
    pub after_sweep: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub evaluation_subset: Option<Vec<String>>,
}

impl ExperimentConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn settings(&self) -> TrainSettings {
        let t = &self.training;
        let d = TrainSettings::default();
        TrainSettings {
            mode: t.mode.unwrap_or(d.mode),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            lr_init: t.lr_init.or(d.lr_init),
            epochs: t.epochs.unwrap_or(d.epochs),
            early_stop_patience: t.early_stop_patience.unwrap_or(d.early_stop_patience),
            grad_clip_norm: t.grad_clip_norm.unwrap_or(d.grad_clip_norm),
            adam: t.adam.unwrap_or(d.adam),
            train_range: t.train_range.unwrap_or(d.train_range),
            val_range: t.val_range.unwrap_or(d.val_range),
            max_train_samples: t.max_train_samples.or(d.max_train_samples),
            max_val_samples: t.max_val_samples.or(d.max_val_samples),
        }
    }

    /// Explicit variable set, if the file names one.
    pub fn variable_set(&self) -> Result<Option<VariableSet>, CliError> {
        let v = &self.variable_set;
        let base = match (&v.preset, v.n_prognostic) {
            (Some(_), Some(_)) => return Err(CliError::Config("set either variable_set.preset or n_prognostic".into())),
            (Some(p), None) => Some(VariableSet::preset(p)?),
            (None, Some(k)) => Some(VariableSet::with_prognostic_count(k)?),
            (None, None) => None,
        };
        Ok(base)
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        let s = &self.sweep;
        let d = SweepSpec::default();
        SweepSpec {
            archs: s.archs.clone().unwrap_or(d.archs),
            n_prognostic: s.n_prognostic.clone().unwrap_or(d.n_prognostic),
            m_steps: s.m_steps.clone().unwrap_or(d.m_steps),
            n_layers: s.n_layers.clone().unwrap_or(d.n_layers),
            hidden_dims: s.hidden_dims.clone().unwrap_or(d.hidden_dims),
            seeds: s.seeds.clone().unwrap_or(d.seeds),
            settings: self.settings(),
            model_overrides: self.model.overrides.clone(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.training.seed.unwrap_or(REPLICATION_SEEDS[0])
    }
}
