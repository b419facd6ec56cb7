use std::io;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structure(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point outside domain: norm {norm} not in [{min}, {max})")]
    Domain { norm: f64, min: f64, max: f64 },

    #[error("singular configuration: {0}")]
    Singularity(&'static str),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("label out of range: {label} (width {width})")]
    LabelOutOfRange { label: usize, width: usize },

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Structure(_) => "structure",
            Error::DimensionMismatch { .. } => "dimension",
            Error::Domain { .. } => "domain",
            Error::Singularity(_) => "singularity",
            Error::Sampling(_) => "sampling",
            Error::UndefinedMetric(_) => "metric",
            Error::LabelOutOfRange { .. } => "label",
            Error::Inconsistent(_) => "inconsistent",
            Error::NonFinite(_) => "non-finite",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
