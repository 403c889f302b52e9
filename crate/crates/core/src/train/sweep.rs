//! Cartesian grid search over architectures, variable sets, `M`, `L`, `D`
//! and seeds, with content-addressed resumable run directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{ModelOverrides, TrainConfig, TrainSettings, REPLICATION_SEEDS, REPLICATION_STEPS};
use super::run::{normalization_for, train, RunStatus, TrainRecord};
use crate::data::{DatasetStore, VariableSet};
use crate::error::{Error, Result};
use crate::models::{Arch, REPLICATION_HIDDEN, REPLICATION_LAYERS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub archs: Vec<Arch>,
    /// Prognostic set sizes; 8 and 33 select the named presets.
    pub n_prognostic: Vec<usize>,
    pub m_steps: Vec<usize>,
    pub n_layers: Vec<usize>,
    pub hidden_dims: Vec<usize>,
    pub seeds: Vec<u64>,
    pub settings: TrainSettings,
    pub model_overrides: ModelOverrides,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            archs: Arch::ALL.to_vec(),
            n_prognostic: vec![8, 33],
            m_steps: REPLICATION_STEPS.to_vec(),
            n_layers: REPLICATION_LAYERS.to_vec(),
            hidden_dims: REPLICATION_HIDDEN.to_vec(),
            seeds: REPLICATION_SEEDS.to_vec(),
            settings: TrainSettings::default(),
            model_overrides: ModelOverrides::default(),
        }
    }
}

impl SweepSpec {
    pub fn n_runs(&self) -> usize {
        self.archs.len()
            * self.n_prognostic.len()
            * self.m_steps.len()
            * self.n_layers.len()
            * self.hidden_dims.len()
            * self.seeds.len()
    }

    /// Runs in `arch, K_p, M, L, D, seed` order.
    pub fn enumerate(&self) -> Result<Vec<TrainConfig>> {
        let mut out = Vec::with_capacity(self.n_runs());
        for &arch in &self.archs {
            for &kp in &self.n_prognostic {
                let vars = VariableSet::with_prognostic_count(kp)?;
                for &m in &self.m_steps {
                    for &l in &self.n_layers {
                        for &d in &self.hidden_dims {
                            for &seed in &self.seeds {
                                out.push(TrainConfig::build(
                                    arch,
                                    vars.clone(),
                                    m,
                                    l,
                                    d,
                                    seed,
                                    &self.settings,
                                    &self.model_overrides,
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub run_id: String,
    pub arch: Arch,
    pub n_prognostic: usize,
    pub m_steps: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    /// `COMPLETED`, `EARLY_STOPPED`, `FAILED` or `ERROR`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub spec: SweepSpec,
    pub runs: Vec<SweepEntry>,
}

pub struct SweepOutcome {
    pub manifest: SweepManifest,
    /// Run IDs trained in this invocation; the rest were resumed.
    pub executed: Vec<String>,
}

pub fn run_dir(run_root: &Path, run_id: &str) -> PathBuf {
    run_root.join("runs").join(run_id)
}

/// A run counts as done when its record and the checkpoint it needs exist.
pub fn completed_record(dir: &Path) -> Option<TrainRecord> {
    let rec: TrainRecord = serde_json::from_str(&fs::read_to_string(dir.join("record.json")).ok()?).ok()?;
    let ckpt = if rec.status == RunStatus::Failed { "last.ckpt" } else { "best.ckpt" };
    dir.join(ckpt).exists().then_some(rec)
}

fn status_name(s: RunStatus) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// Executes every configuration not already completed under
/// `run_root/runs/`, with up to `jobs` concurrent workers, and writes
/// `sweep.json` into `sweep_dir`. Individual failures are recorded.
pub fn run_sweep(
    spec: &SweepSpec,
    store: &DatasetStore,
    run_root: &Path,
    sweep_dir: &Path,
    jobs: usize,
) -> Result<SweepOutcome> {
    let configs = spec.enumerate()?;
    if configs.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    for c in &configs {
        c.validate(store.grid())?;
    }
    let stats = normalization_for(store, &spec.settings.train_range)?;
    let ids: Vec<String> = configs
        .iter()
        .map(|c| c.run_id(store.manifest()))
        .collect::<Result<_>>()?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<(String, Option<String>, bool)>>> = Mutex::new(vec![None; configs.len()]);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= configs.len() {
            break;
        }
        let dir = run_dir(run_root, &ids[i]);
        let res = if let Some(rec) = completed_record(&dir) {
            (status_name(rec.status), None, false)
        } else {
            log::info!("sweep: training {} ({}/{})", ids[i], i + 1, configs.len());
            match train::<f32>(&configs[i], store, &stats, Some(&dir)) {
                Ok(out) => (status_name(out.record.status), None, true),
                Err(e) => (String::from("ERROR"), Some(e.to_string()), true),
            }
        };
        results.lock().unwrap()[i] = Some(res);
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1) {
            s.spawn(worker);
        }
    });

    let results = results.into_inner().unwrap();
    let mut runs = Vec::with_capacity(configs.len());
    let mut executed = Vec::new();
    for ((c, id), r) in configs.iter().zip(&ids).zip(results) {
        let (status, error, ran) = r.expect("every run visited");
        if ran {
            executed.push(id.clone());
        }
        runs.push(SweepEntry {
            run_id: id.clone(),
            arch: c.model.arch,
            n_prognostic: c.model.n_prognostic,
            m_steps: c.m_steps,
            n_layers: c.model.n_layers,
            hidden_dim: c.model.hidden_dim,
            seed: c.seed,
            status,
            error,
        });
    }
    let manifest = SweepManifest {
        spec: spec.clone(),
        runs,
    };
    fs::create_dir_all(sweep_dir)?;
    fs::write(sweep_dir.join("sweep.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(SweepOutcome { manifest, executed })
}
