//! Dense double-precision tensors with tape-based reverse-mode
//! differentiation, plus a central-difference gradient checker.

mod gradcheck;
mod graph;
mod gru;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, relative_error, GradReport, DEFAULT_EPS};
pub use graph::{sigmoid, Gradients, Graph, Mode, SparseRows, Var, PROB_CLAMP};
pub use gru::{gru_shapes, GruVars};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NdError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid configuration: {0}")]
    Config(String),
}
