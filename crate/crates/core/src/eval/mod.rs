//! Long rollouts, blow-up detection and stability scoring.

mod rollout;
mod run_eval;
mod score;


pub use rollout::{
    detect_blowup, rollout, Emulator, FieldMoments, ForcingProvider, RolloutMeta, RolloutStats, TisrForcing,
    BLOWUP_BOUND,
};
pub use run_eval::{evaluate, evaluate_run, load_run_inputs, ScoreFile};
pub use score::{
    aggregate_reports, aggregate_seeds, climatology_baseline, float_or_marker, initial_condition, reference_moments,
    rollout_period, score_moments, score_rollout, stability_score, ScoreMode, ScoreReport, SeedAggregate,
    VariableScore,
};
