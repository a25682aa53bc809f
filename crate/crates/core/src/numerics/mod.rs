//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
pub use graph::{concat_cols, concat_rows, sigmoid, softmax_in_place, Gradients, Graph, Var};
pub use params::{Bound, ParamGrads, ParamSet};
pub use scalar::Scalar;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("log of non-positive value {0}")]
    NonPositiveLog(f64),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("gradient for `{0}` is not finite")]
    NonFiniteGradient(String),
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("no parameter named `{0}`")]
    MissingParam(String),
    #[error("{0}: empty input")]
    Empty(&'static str),
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Self::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
