//! Dense tensors with reverse-mode automatic differentiation.

mod einsum;
mod fft;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use einsum::EinsumSpec;
pub use gradcheck::{check_gradients, check_gradients_sampled, GradCheckReport};
pub use graph::{Gradients, Graph, OpKind, Var};
pub use params::{ParamStore, CHECKPOINT_HEADER};
pub use tensor::Tensor;
