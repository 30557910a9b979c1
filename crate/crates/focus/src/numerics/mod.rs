//! Dense tensor kernels, the attention primitive, and tape-based reverse-mode
//! differentiation restricted to the trainable parameter set.

mod gradcheck;
pub mod tape;
pub mod tensor;

pub use gradcheck::finite_diff_check;
pub use tape::{Graph, Mode, ValueId};
pub use tensor::{attention, softmax_rows, BoolMask, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate attention row {row}: every key is masked out")]
    DegenerateAttentionRow { row: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss node, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("differentiation is disabled on this graph (inference mode)")]
    DifferentiationDisabled,
}
