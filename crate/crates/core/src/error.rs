use std::path::PathBuf;

/// Errors produced by the numerical core, the layers and the tuner.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("decomposition failed after retry (detected rank {rank}): {reason}")]
    Decomposition { rank: usize, reason: String },

    #[error("selector {selector}: {reason}")]
    Selection { selector: String, reason: String },

    #[error("no trial satisfied the accuracy threshold")]
    NoFeasibleConfig,

    #[error("cannot apply assignment: {0}")]
    Application(String),

    #[error("failed to load model from {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
