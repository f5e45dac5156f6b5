//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Complex values are carried as `(re, im)` pairs in a trailing axis of
//! length 2, so every gradient is the ordinary real gradient of a real loss.

mod graph;
mod gradcheck;
mod linalg;
pub mod nn;
mod ops;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Function, Gradients, Graph, NodeId};
pub use nn::ConvGeometry;
pub use ops::*;
pub use tensor::Tensor;

pub(crate) use tensor::{cget, cset};
