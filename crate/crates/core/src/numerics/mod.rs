//! Dense `f64` tensors and a define-by-run differentiation tape.

mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_all, GradCheckReport, HasParams};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Primitive, Tape, Var};
pub use tensor::Tensor;

/// Stand-in for `ln 0` inside lattice recursions. Finite so that sums and
/// gradients never produce NaN.
pub const LOG_ZERO: f64 = -1e300;

/// Additive score that zeroes a position after softmax (`exp` underflows to exactly 0).
pub const MASK_SCORE: f64 = -1e30;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericsError {
    #[error("{primitive}: shape mismatch ({detail})")]
    ShapeMismatch { primitive: &'static str, detail: String },
    #[error("unknown primitive kind `{0}`")]
    UnknownPrimitive(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss does not depend on any parameter")]
    DetachedLoss,
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("non-finite value {value} at entry {entry} of `{param}` during gradient check")]
    NonFinite { param: String, entry: usize, value: f64 },
    #[error("gradient check step must be positive, got {0}")]
    InvalidStep(f64),
}
