//! Dense tensors and a tape-based reverse-mode autodiff engine.

mod gradcheck;
mod graph;
pub mod ops;
mod params;
mod scalar;
#[allow(clippy::module_inception)]
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{Param, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch { op: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("shape {shape:?} does not match data length {len}")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("backward root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("cross entropy: every position is masked")]
    AllMasked,
}

#[cfg(test)]
mod tests;
