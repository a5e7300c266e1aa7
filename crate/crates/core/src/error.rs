//! Crate-wide error type.
//!
//! Library functions return `Result<T>`; variants carry enough context to
//! name the offending operation, shapes, or field without a debugger.

/// Errors produced by the tracking stack.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Two shapes that must conform do not.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A shape is invalid for the operation regardless of any counterpart.
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },

    /// An index (class id, target column, parameter id) is out of range.
    #[error("{op}: index {index} out of range 0..{len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },

    /// A non-finite value reached an operation that requires finite input.
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },

    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value failed validation.
    #[error("invalid config: {field}: {reason}")]
    Config { field: String, reason: String },

    /// Input data (scenario file, checkpoint, report) is malformed.
    #[error("data error: {0}")]
    Data(String),

    /// A named parameter was used before its gradient was populated.
    #[error("adamw_step: missing gradient for parameter `{0}`")]
    MissingGrad(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for contract violations.
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Shorthand for data errors.
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Shorthand for config errors.
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
