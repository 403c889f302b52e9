//! Dataset storage, variable sets, normalization, solar forcing, sample
//! indexing and the synthetic reference climate.

mod batch;
pub mod calendar;
mod stats;
mod store;
mod synthetic;
pub mod tisr;
mod variables;


pub use batch::{load_batch, normalized_constants, NormalizedSeries, Window};
pub use calendar::{
    format_timestamp, parse_timestamp, sample_index, step_duration, steps_between, ymd_h, TimeRange, Timestamp,
    STEP_HOURS,
};
pub use stats::{compute_normalization, Moments, NamedStats, NormalizationStats, VarStats, STD_FLOOR};
pub use store::{DatasetStore, Manifest, CALENDAR, DATASET_FORMAT};
pub use synthetic::{generate_synthetic_climate, variable_profile, SyntheticConfig};
pub use tisr::{compute_tisr, SOLAR_CONSTANT};
pub use variables::{VariableSet, CONSTANTS, DEFAULT_EVALUATION, FORCINGS};
