//! Minimal reverse-mode autodiff over dense `f64` tensors, plus optimizer and checkpoints.

pub mod checkpoint;
mod graph;
pub mod params;
mod tensor;

pub use graph::{sigmoid, Graph, Var};
pub use params::{Adam, Binding, Gradients, ParameterSet};
pub use tensor::Tensor;
