//! Reverse-mode automatic differentiation over dense `f32` arrays, with the
//! Adam optimizer and an exponential learning-rate schedule.

mod adam;
mod error;
mod graph;
pub mod io;
pub mod ops;
mod param;
mod schedule;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use error::{AdError, Result};
pub use graph::{Gradients, Graph, NodeId, UnaryOp, Var};
pub use param::ParamTensor;
pub use schedule::lr_at;
pub use tensor::Tensor;
