use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("did not converge: {0}")]
    Convergence(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// A copy for reporting one shared failure against several consumers.
    pub fn duplicate(&self) -> Error {
        match self {
            Error::Domain(m) => Error::Domain(m.clone()),
            Error::Estimation(m) => Error::Estimation(m.clone()),
            Error::Parse { row, message } => Error::Parse {
                row: *row,
                message: message.clone(),
            },
            Error::Validation(m) => Error::Validation(m.clone()),
            Error::Config(m) => Error::Config(m.clone()),
            Error::Convergence(m) => Error::Convergence(m.clone()),
            Error::Internal(m) => Error::Internal(m.clone()),
            other => Error::Internal(other.to_string()),
        }
    }

    /// True for errors caused by malformed user input rather than a numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Config(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
