//! Crate-wide error type.

use std::io;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BteError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// An i/o failure on a named file, so diagnostics can say which path
    /// was involved.
    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: io::Error,
    },

    /// A malformed input record. `line` is 1-based and counts data lines
    /// (a CSV header is line 1).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data that parsed but cannot be processed as requested
    /// (e.g. a user filter naming an id absent from the ratings).
    #[error("{0}")]
    Data(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BteError>;
