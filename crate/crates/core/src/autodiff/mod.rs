//! Minimal reverse-mode automatic differentiation over `f64` tensors.

mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use graph::{log_softmax, softmax, Graph, Var};
pub(crate) use graph::sigmoid;
pub use optim::{clip_by_global_norm, Adam};
pub use params::{Gradients, ParamId, ParamSet};
pub use tensor::Tensor;
pub(crate) use tensor::dot;
