//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("value {value} at index ({i}, {j}) outside substitution-map domain [{lo}, {hi}]")]
    DomainViolation {
        i: usize,
        j: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("non-binary input at index ({i}, {j}): {value} (pass soft mode to accept [0,1] data)")]
    NonBinaryInput { i: usize, j: usize, value: f64 },

    #[error("non-finite value during time step {step}")]
    NonFinite { step: usize },

    #[error("control container has {got} time slots, expected {expected}")]
    BadControlLength { expected: usize, got: usize },

    #[error("time index {k} out of range (have {len} control slots)")]
    TimeIndexOutOfRange { k: usize, len: usize },

    #[error("kernel quadratic form is negative ({value}) at step {k}; radial kernel is not positive definite")]
    KernelNotPositiveDefinite { k: usize, value: f64 },

    #[error("line search failed after {trials} trials")]
    LineSearchFailure { trials: usize },

    #[error("direction is not a descent direction (g.d = {gtd})")]
    NotDescentDirection { gtd: f64 },

    #[error("optimizer aborted at iteration {iter}: {reason}")]
    OptimizerAbort { iter: usize, reason: String },

    #[error("malformed container: {0}")]
    BadContainer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
