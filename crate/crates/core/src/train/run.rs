//! The training protocol: seeded shuffling, clipped Adam steps, cosine
//! schedule, per-epoch validation and early stopping.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::loss::{batch_loss_and_grads, multi_step_loss_graph, persistence_loss};
use super::optim::{clip_grad_norm, cosine_lr, Adam, EarlyStopping};
use crate::autodiff::Graph;
use crate::data::{
    compute_normalization, load_batch, sample_index, step_duration, DatasetStore,
    NormalizationStats, NormalizedSeries, TimeRange, Timestamp, Window,
};
use crate::error::{Error, Result};
use crate::models::{build_model, ModelState};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Completed,
    EarlyStopped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// `None` when non-finite.
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    /// Root of the mean area-weighted one-step squared error.
    pub val_rmse_1step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub what: String,
    pub epoch: usize,
    pub step: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub run_id: String,
    pub status: RunStatus,
    pub epochs: Vec<EpochRecord>,
    pub stopping_epoch: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub best_checkpoint: Option<String>,
    pub persistence_val_loss: f64,
    pub n_params: usize,
    pub n_train_samples: usize,
    pub n_val_samples: usize,
    pub failure: Option<Failure>,
}

pub struct TrainOutcome<T: Scalar> {
    /// Best-validation parameters, or the initial ones if no epoch finished.
    pub model: ModelState<T>,
    pub record: TrainRecord,
}

/// The dataset's own statistics when they cover exactly `train`,
/// otherwise freshly computed ones.
pub fn normalization_for(store: &DatasetStore, train: &TimeRange) -> Result<NormalizationStats> {
    if let Ok(s) = store.stats() {
        if s.train_range == *train {
            return Ok(s);
        }
    }
    compute_normalization(store, train)
}

enum Source {
    Memory(NormalizedSeries),
    Disk,
}

/// Windows come from memory when the covered span is small enough.
struct Samples<'a> {
    store: &'a DatasetStore,
    stats: &'a NormalizationStats,
    source: Source,
    m: usize,
}

const IN_MEMORY_LIMIT_BYTES: usize = 1 << 31;

impl<'a> Samples<'a> {
    fn new(store: &'a DatasetStore, stats: &'a NormalizationStats, cfg: &TrainConfig) -> Result<Self> {
        let m = cfg.m_steps;
        let start = cfg.train_range.start.min(cfg.val_range.start);
        let reach = cfg.train_range.end.max(cfg.val_range.end) + step_duration() * m as i32;
        let end = reach.min(store.time_range().end);
        let span = TimeRange::new(start, end)?;
        let man = store.manifest();
        let bytes = span.n_steps() * (man.prognostic.len() + man.forcings.len()) * store.grid().n_points() * 4;
        let source = if bytes <= IN_MEMORY_LIMIT_BYTES {
            Source::Memory(NormalizedSeries::load(store, stats, &span)?)
        } else {
            Source::Disk
        };
        Ok(Self {
            store,
            stats,
            source,
            m,
        })
    }

    fn windows<T: Scalar>(&self, ts: &[Timestamp]) -> Result<Vec<Window<T>>> {
        match &self.source {
            Source::Memory(s) => ts.iter().map(|t| s.window(t, self.m)).collect(),
            Source::Disk => load_batch(self.store, self.stats, ts, self.m),
        }
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn evenly_spaced(all: &[Timestamp], n: Option<usize>) -> Vec<Timestamp> {
    match n {
        Some(n) if n < all.len() => (0..n).map(|i| all[i * all.len() / n]).collect(),
        _ => all.to_vec(),
    }
}

struct RunLog {
    path: Option<PathBuf>,
    start: Instant,
}

impl RunLog {
    fn line(&self, msg: &str) {
        log::info!("{msg}");
        if let Some(p) = &self.path {
            if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(p) {
                let _ = writeln!(f, "[{:9.2}s] {msg}", self.start.elapsed().as_secs_f64());
            }
        }
    }
}

/// Mean multi-step loss and one-step RMSE over `samples`.
fn validate<T: Scalar>(
    model: &ModelState<T>,
    samples: &Samples<'_>,
    ts: &[Timestamp],
    weights: &[T],
) -> Result<(f64, f64)> {
    let (mut loss, mut one) = (0.0, 0.0);
    for chunk in ts.chunks(64) {
        for w in samples.windows::<T>(chunk)? {
            let mut g = Graph::new();
            let b = model.bind(&mut g, false);
            let nodes = multi_step_loss_graph(&mut g, model, b.vars(), &w, weights)?;
            loss += g.value(nodes.total).data()[0].to_f64().unwrap_or(f64::NAN);
            one += g.value(nodes.steps[0]).data()[0].to_f64().unwrap_or(f64::NAN);
        }
    }
    let n = ts.len() as f64;
    Ok((loss / n, (one / n).sqrt()))
}

fn checkpoint_meta(cfg: &TrainConfig, run_id: &str, epoch: usize) -> Result<BTreeMap<String, serde_json::Value>> {
    let mut meta = BTreeMap::new();
    meta.insert("run_id".into(), serde_json::Value::from(run_id));
    meta.insert("epoch".into(), serde_json::Value::from(epoch));
    meta.insert("train_config".into(), serde_json::to_value(cfg)?);
    Ok(meta)
}

/// Runs the protocol; with `run_dir` the checkpoints, `record.json` and
/// `log.txt` are written there. A non-finite loss yields a `FAILED`
/// record rather than an error.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    store: &DatasetStore,
    stats: &NormalizationStats,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    let grid = store.grid().clone();
    cfg.validate(&grid)?;
    if store.manifest().prognostic != cfg.variable_set.prognostic
        || store.manifest().forcings != cfg.variable_set.forcings
        || store.manifest().constants != cfg.variable_set.constants
    {
        return Err(Error::Config("dataset variables differ from the configured variable set".into()));
    }
    let data = store.time_range();
    if !data.contains_range(&cfg.train_range) || !data.contains_range(&cfg.val_range) {
        return Err(Error::Range("training or validation range outside the dataset".into()));
    }
    let run_id = cfg.run_id(store.manifest())?;
    if let Some(d) = run_dir {
        fs::create_dir_all(d)?;
        let _ = fs::remove_file(d.join("log.txt"));
    }
    let log = RunLog {
        path: run_dir.map(|d| d.join("log.txt")),
        start: Instant::now(),
    };

    let train_samples = sample_index(&cfg.train_range, cfg.m_steps, &data.end);
    let val_all = sample_index(&cfg.val_range, cfg.m_steps, &data.end);
    let val_samples = evenly_spaced(&val_all, cfg.max_val_samples);
    if train_samples.is_empty() || val_samples.is_empty() {
        return Err(Error::Range(format!(
            "no samples with a {}-step horizon in the training or validation range",
            cfg.m_steps
        )));
    }
    let samples = Samples::new(store, stats, cfg)?;
    let weights_f64 = grid.area_weights().as_slice().to_vec();
    let weights: Vec<T> = grid.area_weights().cast();

    let mut persistence = 0.0;
    for chunk in val_samples.chunks(64) {
        for w in samples.windows::<T>(chunk)? {
            persistence += persistence_loss(&w, &weights_f64);
        }
    }
    persistence /= val_samples.len() as f64;

    let mut model: ModelState<T> = build_model(&cfg.model, &grid, cfg.seed)?;
    let mut best = model.params().clone();
    let mut adam = Adam::new(cfg.adam, model.params().tensors());
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut record = TrainRecord {
        run_id: run_id.clone(),
        status: RunStatus::Completed,
        epochs: Vec::new(),
        stopping_epoch: 0,
        best_epoch: None,
        best_val_loss: None,
        best_checkpoint: None,
        persistence_val_loss: persistence,
        n_params: model.n_params(),
        n_train_samples: train_samples.len(),
        n_val_samples: val_samples.len(),
        failure: None,
    };
    log.line(&format!(
        "run {run_id}: {} parameters, {} train / {} val samples, persistence val loss {persistence:.6e}",
        record.n_params, record.n_train_samples, record.n_val_samples
    ));

    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_init);
        let mut order = train_samples.clone();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        if let Some(n) = cfg.max_train_samples {
            order.truncate(n);
        }
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let windows = samples.windows::<T>(batch)?;
            let fail = |what: &str, message: String| Failure {
                what: what.into(),
                epoch: epoch + 1,
                step,
                seed: cfg.seed,
                message,
            };
            let failure = match batch_loss_and_grads(&model, &windows, &weights) {
                Ok((loss, mut grads)) if loss.is_finite() => match clip_grad_norm(&mut grads, cfg.grad_clip_norm) {
                    Ok(_) => {
                        adam.step(model.params_mut().tensors_mut(), &grads, lr)?;
                        sum += loss * batch.len() as f64;
                        count += batch.len();
                        None
                    }
                    Err(e) => Some(fail("gradient norm", e.to_string())),
                },
                Ok((loss, _)) => Some(fail(
                    "training loss",
                    Error::Diverged {
                        what: format!("training loss {loss}"),
                        config: run_id.clone(),
                        step,
                        seed: cfg.seed,
                    }
                    .to_string(),
                )),
                Err(e @ Error::NonFinite { .. }) => Some(fail("training loss", e.to_string())),
                Err(e) => return Err(e),
            };
            step += 1;
            if let Some(f) = failure {
                log.line(&format!("FAILED at epoch {} step {}: {}", f.epoch, f.step, f.message));
                record.epochs.push(EpochRecord {
                    epoch: epoch + 1,
                    lr,
                    train_loss: None,
                    val_loss: None,
                    val_rmse_1step: None,
                });
                record.status = RunStatus::Failed;
                record.failure = Some(f);
                record.stopping_epoch = epoch + 1;
                break 'epochs;
            }
        }
        let train_loss = sum / count.max(1) as f64;
        let (val_loss, rmse1) = validate(&model, &samples, &val_samples, &weights)?;
        record.epochs.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: finite(train_loss),
            val_loss: finite(val_loss),
            val_rmse_1step: finite(rmse1),
        });
        record.stopping_epoch = epoch + 1;
        log.line(&format!(
            "epoch {:>3} lr {lr:.3e} train {train_loss:.6e} val {val_loss:.6e} (persistence {persistence:.6e})",
            epoch + 1
        ));
        if !val_loss.is_finite() {
            record.status = RunStatus::Failed;
            record.failure = Some(Failure {
                what: "validation loss".into(),
                epoch: epoch + 1,
                step,
                seed: cfg.seed,
                message: format!("non-finite validation loss {val_loss}"),
            });
            break;
        }
        let decision = stopper.observe(epoch + 1, val_loss);
        if decision.improved {
            best = model.params().clone();
            record.best_epoch = Some(epoch + 1);
            record.best_val_loss = Some(val_loss);
            record.best_checkpoint = Some("best.ckpt".into());
            if let Some(d) = run_dir {
                let snapshot = ModelState::from_params(cfg.model.clone(), grid.clone(), best.clone())?;
                snapshot.save(&d.join("best.ckpt"), checkpoint_meta(cfg, &run_id, epoch + 1)?)?;
            }
        }
        if let Some(d) = run_dir {
            model.save(&d.join("last.ckpt"), checkpoint_meta(cfg, &run_id, epoch + 1)?)?;
        }
        if decision.stop && epoch + 1 < cfg.epochs {
            record.status = RunStatus::EarlyStopped;
            log.line(&format!(
                "early stop after epoch {}; best epoch {:?}",
                epoch + 1,
                record.best_epoch
            ));
            break;
        }
    }
    if let Some(d) = run_dir {
        if record.status == RunStatus::Failed {
            model.save(&d.join("last.ckpt"), checkpoint_meta(cfg, &run_id, record.stopping_epoch)?)?;
        }
        fs::write(d.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
        fs::write(d.join("stats.json"), serde_json::to_string_pretty(stats)?)?;
        fs::write(d.join("record.json"), serde_json::to_string_pretty(&record)?)?;
    }
    let model = ModelState::from_params(cfg.model.clone(), grid, best)?;
    log.line(&format!(
        "finished: {:?} at epoch {}, best val loss {:?}",
        record.status, record.stopping_epoch, record.best_val_loss
    ));
    Ok(TrainOutcome { model, record })
}
