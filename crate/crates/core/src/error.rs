use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid segment id {id} (segment count {count})")]
    InvalidSegment { id: usize, count: usize },

    #[error("invalid character {0:?}: labels use [a-z0-9]")]
    InvalidChar(char),

    #[error("invalid label {0:?}: {1}")]
    InvalidLabel(String, String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("model has no gradient capability; {0} needs input gradients")]
    GradientUnavailable(&'static str),

    #[error("missing input: {0}")]
    Missing(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged in epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("model format: {0}")]
    Format(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{}: {error}", path.display())]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, error: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            error,
        }
    }
}
