//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, numeric kernels, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A dimension or width does not match what the operation requires.
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    /// A state rate `A[n] == 0` makes the zero-order-hold input matrix
    /// undefined; callers that need `A = 0` must use the Taylor rule.
    #[error("degenerate rate: A contains a zero entry (channel {channel}, state {state})")]
    DegenerateRate { channel: usize, state: usize },

    /// A parameter violates its documented domain (`lambda <= 0`, odd
    /// positional-encoding width, non-negative state rate, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Configuration file problem: unknown key, unparsable value, missing file.
    #[error("config error: {0}")]
    Config(String),

    /// A stored tensor, checkpoint, or dataset failed validation on load.
    #[error("corrupt data: {0}")]
    Corrupt(String),

    /// Training produced a non-finite loss.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Evaluation was asked to run on an empty dataset.
    #[error("empty dataset")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
