use std::io;
use std::path::PathBuf;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, sizes, modes).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("cannot ingest {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    /// A fitting routine cannot proceed on the data it was given.
    #[error("fit error: {0}")]
    Fit(String),

    /// A persisted artifact is malformed, truncated, or fails its digest.
    #[error("load error: {0}")]
    Load(String),

    /// Training or solving produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
