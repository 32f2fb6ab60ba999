//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments: shape mismatches, non-finite entries, values
    /// outside their admissible interval.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Structurally valid input on which the operation is undefined
    /// (all-zero matrices, vanished denominators).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Command-line / config-file problems. Messages name the offending
    /// key or command.
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    ParseFile { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
