use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BnmrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BnmrError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{path}: {source}", path = path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}", path = path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("precision matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("cannot scale a flat posterior: every retained draw has zero total increment")]
    FlatPosterior,

    #[error("empty posterior sample")]
    EmptySample,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl BnmrError {
    /// True for failures raised inside the sampler itself rather than by the
    /// caller's data or configuration.
    pub fn is_sampler_failure(&self) -> bool {
        matches!(self, Self::NotPositiveDefinite | Self::Numerical(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Self::Csv {
            path: path.into(),
            source,
        }
    }
}
