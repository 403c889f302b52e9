//! Multi-step objective, optimization protocol and sweep runner.

mod config;
mod loss;
mod optim;
mod run;
mod sweep;

#[cfg(test)]
mod tests;

pub use config::{
    ModelOverrides, TrainConfig, TrainSettings, REPLICATION_SEEDS, REPLICATION_BATCH, REPLICATION_CLIP,
    REPLICATION_EPOCHS, REPLICATION_PATIENCE, REPLICATION_STEPS,
};
pub use loss::{
    batch_loss_and_grads, multi_step_loss, multi_step_loss_graph, persistence_loss, weighted_mse,
    LossNodes,
};
pub use optim::{clip_grad_norm, cosine_lr, global_norm, Adam, AdamConfig, EarlyStopping, StopDecision};
pub use run::{normalization_for, train, EpochRecord, Failure, RunStatus, TrainOutcome, TrainRecord};
pub use sweep::{
    completed_record, run_dir, run_sweep, SweepEntry, SweepManifest, SweepOutcome, SweepSpec,
};
