//! One error type for the whole crate, split by failure domain so the CLI can
//! map it onto exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration: invalid hyperparameter, malformed config file,
    /// unknown preset name, and so on. CLI exit code 2.
    #[error("config: {0}")]
    Config(String),

    /// Structurally invalid runtime input: shape mismatch, label out of
    /// range, empty sample. CLI exit code 3.
    #[error("input: {0}")]
    Input(String),

    /// A computation produced NaN/Inf or otherwise left the numeric domain.
    #[error("numeric: {0}")]
    Numeric(String),

    /// An operation was called in the wrong order (e.g. backward against a
    /// forward cache that does not match).
    #[error("state: {0}")]
    State(String),

    /// A binary/text artifact on disk does not decode; `offset` is the byte
    /// position where decoding gave up.
    #[error("format: at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }

    /// Exit code for the `bdn` binary: 0 is success, 2 a configuration
    /// problem, 3 a data/format/runtime problem.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
