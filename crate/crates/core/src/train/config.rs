//! Training configuration and content-addressed run identifiers.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::AdamConfig;
use crate::data::{Manifest, TimeRange, VariableSet};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::models::{Arch, ModelSpec, SpecMode};

pub const REPLICATION_STEPS: [usize; 3] = [1, 2, 4];
pub const REPLICATION_BATCH: usize = 64;
pub const REPLICATION_EPOCHS: usize = 20;
pub const REPLICATION_PATIENCE: usize = 5;
pub const REPLICATION_CLIP: f64 = 1e-3;
pub const REPLICATION_SEEDS: [u64; 10] = [597, 1152, 1826, 3909, 6153, 5513, 5707, 9813, 9941, 9982];

/// Protocol settings shared by every run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub mode: SpecMode,
    pub batch_size: usize,
    /// Architecture default when absent.
    pub lr_init: Option<f64>,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub grad_clip_norm: f64,
    pub adam: AdamConfig,
    pub train_range: TimeRange,
    pub val_range: TimeRange,
    /// Free mode only: samples drawn from each epoch's permutation.
    pub max_train_samples: Option<usize>,
    /// Free mode only: evenly spaced validation samples.
    pub max_val_samples: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            mode: SpecMode::Replication,
            batch_size: REPLICATION_BATCH,
            lr_init: None,
            epochs: REPLICATION_EPOCHS,
            early_stop_patience: REPLICATION_PATIENCE,
            grad_clip_norm: REPLICATION_CLIP,
            adam: AdamConfig::default(),
            train_range: TimeRange::years(1979, 2007).unwrap(),
            val_range: TimeRange::years(2008, 2008).unwrap(),
            max_train_samples: None,
            max_val_samples: None,
        }
    }
}

/// Free-mode replacements for architecture family defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOverrides {
    pub patch_size: Option<(usize, usize)>,
    pub n_heads: Option<usize>,
    pub mlp_ratio: Option<f64>,
    pub decoder_depth: Option<usize>,
    pub sparsity_threshold: Option<f64>,
    pub hard_threshold_fraction: Option<f64>,
    pub n_blocks: Option<usize>,
    pub use_pos_embed: Option<bool>,
    pub big_skip: Option<bool>,
    pub use_mlp: Option<bool>,
}

impl ModelOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, spec: &mut ModelSpec) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { spec.$f = v; } )* };
        }
        set!(
            patch_size,
            n_heads,
            mlp_ratio,
            decoder_depth,
            sparsity_threshold,
            hard_threshold_fraction,
            n_blocks,
            use_pos_embed,
            big_skip,
            use_mlp
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSpec,
    /// Autoregressive steps `M` of the objective.
    pub m_steps: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub grad_clip_norm: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub variable_set: VariableSet,
    pub train_range: TimeRange,
    pub val_range: TimeRange,
    #[serde(default)]
    pub max_train_samples: Option<usize>,
    #[serde(default)]
    pub max_val_samples: Option<usize>,
}

impl TrainConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        arch: Arch,
        variable_set: VariableSet,
        m_steps: usize,
        n_layers: usize,
        hidden_dim: usize,
        seed: u64,
        settings: &TrainSettings,
        overrides: &ModelOverrides,
    ) -> Self {
        let mut model = ModelSpec::new(
            arch,
            n_layers,
            hidden_dim,
            variable_set.n_prognostic(),
            variable_set.n_forcing(),
            variable_set.n_constant(),
        );
        model.mode = settings.mode;
        overrides.apply(&mut model);
        Self {
            model,
            m_steps,
            batch_size: settings.batch_size,
            lr_init: settings.lr_init.unwrap_or_else(|| arch.default_lr()),
            epochs: settings.epochs,
            early_stop_patience: settings.early_stop_patience,
            grad_clip_norm: settings.grad_clip_norm,
            adam: settings.adam,
            seed,
            variable_set,
            train_range: settings.train_range,
            val_range: settings.val_range,
            max_train_samples: settings.max_train_samples,
            max_val_samples: settings.max_val_samples,
        }
    }

    /// Published protocol for one grid point.
    pub fn replication(arch: Arch, variable_set: VariableSet, m_steps: usize, n_layers: usize, hidden_dim: usize, seed: u64) -> Self {
        Self::build(
            arch,
            variable_set,
            m_steps,
            n_layers,
            hidden_dim,
            seed,
            &TrainSettings::default(),
            &ModelOverrides::default(),
        )
    }

    pub fn mode(&self) -> SpecMode {
        self.model.mode
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.validate(grid)?;
        self.variable_set.validate()?;
        let vs = &self.variable_set;
        if (vs.n_prognostic(), vs.n_forcing(), vs.n_constant())
            != (self.model.n_prognostic, self.model.n_forcing, self.model.n_constant)
        {
            return bad(format!(
                "model channels ({}, {}, {}) do not match the variable set ({}, {}, {})",
                self.model.n_prognostic,
                self.model.n_forcing,
                self.model.n_constant,
                vs.n_prognostic(),
                vs.n_forcing(),
                vs.n_constant()
            ));
        }
        if self.m_steps == 0 || self.batch_size == 0 || self.epochs == 0 || self.early_stop_patience == 0 {
            return bad("M, batch_size, epochs and early_stop_patience must be positive".into());
        }
        if !(self.lr_init > 0.0) || !(self.grad_clip_norm > 0.0) {
            return bad("lr_init and grad_clip_norm must be positive".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.max_train_samples == Some(0) || self.max_val_samples == Some(0) {
            return bad("sample limits must be positive".into());
        }
        if self.mode() == SpecMode::Replication {
            if !REPLICATION_STEPS.contains(&self.m_steps) {
                return bad(format!("replication mode requires M in {REPLICATION_STEPS:?}, got {}", self.m_steps));
            }
            let vp = &vs.prognostic;
            if *vp != VariableSet::vars8().prognostic && *vp != VariableSet::vars33().prognostic {
                return bad("replication mode requires the vars8 or vars33 prognostic set".into());
            }
            let locked = [
                (self.batch_size == REPLICATION_BATCH, "batch_size 64"),
                (self.lr_init == self.model.arch.default_lr(), "the architecture learning rate"),
                (self.epochs == REPLICATION_EPOCHS, "20 epochs"),
                (self.early_stop_patience == REPLICATION_PATIENCE, "patience 5"),
                (self.grad_clip_norm == REPLICATION_CLIP, "gradient clip 0.001"),
                (self.adam == AdamConfig::default(), "adam (0.9, 0.999, 1e-8)"),
                (
                    self.max_train_samples.is_none() && self.max_val_samples.is_none(),
                    "no sample limits",
                ),
            ];
            if let Some((_, what)) = locked.iter().find(|(ok, _)| !ok) {
                return bad(format!("replication mode requires {what}; use free mode to override"));
            }
        }
        Ok(())
    }

    /// `<arch>-k<K_p>-m<M>-l<L>-d<D>-s<seed>-<hash>`, where the hash covers
    /// the full configuration and the dataset manifest.
    pub fn run_id(&self, dataset: &Manifest) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self)?);
        h.update(serde_json::to_vec(dataset)?);
        let digest = hex::encode(h.finalize());
        Ok(format!(
            "{}-k{}-m{}-l{}-d{}-s{}-{}",
            self.model.arch,
            self.model.n_prognostic,
            self.m_steps,
            self.model.n_layers,
            self.model.hidden_dim,
            self.seed,
            &digest[..12]
        ))
    }
}
