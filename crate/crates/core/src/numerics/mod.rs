//! Dense `f64` matrices, a reverse-mode differentiation tape and
//! finite-difference gradient checking.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, CoordCheck, GradCheckReport, GRADIENT_FLOOR};
pub use graph::{leaky_relu, logsumexp, sigmoid, Axis, Graph, Var};
pub use params::{glorot_uniform, Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

use thiserror::Error;

/// Slope of the leaky rectifier used by every attention score.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{0}")]
    Contract(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("loss is not deterministic: {first} then {second}")]
    Determinism { first: f64, second: f64 },
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, a: &Tensor, b: &Tensor) -> Self {
        NumericsError::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        }
    }
}
