//! Error taxonomy shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed input while parsing a line-oriented file. `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A structural invariant of an otherwise well-formed input is violated.
    #[error("validation error on field `{field}`: {msg}")]
    Validation { field: String, msg: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    /// A caller broke an inter-module contract (e.g. routed candidates from
    /// the wrong reference stream into a match state).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
