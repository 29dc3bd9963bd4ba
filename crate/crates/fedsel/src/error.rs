//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Vector/matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// CSV ingestion failed; the message names the offending row/column.
    #[error("csv ingestion: {0}")]
    Ingestion(String),

    /// Checkpoint could not be written or read back.
    #[error("checkpoint storage: {0}")]
    Storage(String),

    /// Checkpoint bytes are present but fail validation (magic, version, CRC).
    #[error("checkpoint integrity: {0}")]
    Integrity(String),

    /// Experiment configuration is invalid; one line per violation.
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
