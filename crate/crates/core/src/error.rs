//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Filesystem problem; carries the offending path.
    #[error("file error: {path}: {message}")]
    File { path: PathBuf, message: String },

    /// Structurally invalid input (manifest columns, checkpoint layout).
    #[error("schema error: {0}")]
    Schema(String),

    /// Well-formed input with invalid content (bad label, empty split).
    #[error("data error: {0}")]
    Data(String),

    /// Tensor dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid or unknown configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A loss term became NaN or infinite during training.
    #[error("non-finite {term} loss at step {step}")]
    NonFinite { term: &'static str, step: u64 },
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::File { path: path.into(), message: err.to_string() }
    }
}
