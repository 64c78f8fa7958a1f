use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation was requested in a state that does not allow it.
    #[error("state error: {0}")]
    State(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("token {token:?} at position {position} is not in the vocabulary")]
    UnknownToken { token: String, position: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("missing feature file for utterance `{id}`: {path}")]
    MissingFeatures { id: String, path: PathBuf },

    #[error("training diverged at epoch {epoch}: loss {loss} exceeds {factor}x initial {initial}")]
    Divergence {
        epoch: usize,
        loss: f64,
        initial: f64,
        factor: f64,
    },

    /// Returned by an epoch callback to stop training after a saved epoch.
    #[error("training interrupted after epoch {epoch}")]
    Interrupted { epoch: usize },

    #[error("stream aborted at step {step}: {source}")]
    StreamAborted {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
