use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// An external objective timed out, crashed or answered with garbage.
    #[error("objective failure: {message}")]
    ObjectiveFailure {
        message: String,
        payload: Option<String>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn objective(msg: impl Into<String>, payload: Option<String>) -> Self {
        Error::ObjectiveFailure {
            message: msg.into(),
            payload,
        }
    }
}
