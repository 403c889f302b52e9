//! Training, rollout and long-term stability scoring for autoregressive
//! emulators of gridded spherical dynamics.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod models;
pub mod report;
pub mod scalar;
pub mod spectral;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{AreaWeights, GridSpec};
pub use scalar::Scalar;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
