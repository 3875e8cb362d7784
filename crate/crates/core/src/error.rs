use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the CGTNS library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty determinant space: {0}")]
    EmptySpace(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("no configuration state functions: {0}")]
    EmptyBasis(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index out of bounds: {0}")]
    IndexOutOfBounds(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serialization(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("energy estimator undefined for CSF {csf}: weight {weight:e} is below the screening floor")]
    EstimatorUndefined { csf: usize, weight: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
