//! Small dense-tensor substrate: row-major `f64` matrices, the forward and
//! backward operations attention needs, and a finite-difference checker.
//!
//! All values are immutable once built and every operation is a pure
//! function, so results are bit-identical across calls and threads.

mod attention;
pub mod gradcheck;
mod matrix;
pub mod ops;

pub use attention::{mhca, mhca_backward, MhcaGrads, MhcaOutput, MhcaParams};
pub use gradcheck::{finite_diff_check, GradReport};
pub use matrix::Matrix;
pub use ops::{softmax, softmax_backward, Axis};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("non-finite entry")]
    NonFinite,
    #[error("attention needs at least one head")]
    ZeroHeads,
    #[error("{heads} heads do not divide model width {width}")]
    HeadsNotDivisor { heads: usize, width: usize },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("{params} parameters but {grads} gradient entries")]
    GradientLength { params: usize, grads: usize },
    #[error("objective is not finite when perturbing parameter {index}")]
    NonFiniteObjective { index: usize },
}

impl TensorError {
    pub(crate) fn mismatch(op: &'static str, left: &Matrix, right: &Matrix) -> Self {
        TensorError::DimensionMismatch {
            op,
            left: left.shape(),
            right: right.shape(),
        }
    }
}
