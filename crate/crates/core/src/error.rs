use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or out-of-range parameter supplied by the caller.
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed or inconsistent input data.
    #[error("data error{}: {msg}", location.as_deref().map(|l| format!(" at {l}")).unwrap_or_default())]
    Data {
        msg: String,
        /// "file:line" when the problem came from an input file.
        location: Option<String>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data {
            msg: msg.into(),
            location: None,
        }
    }

    pub fn data_at(msg: impl Into<String>, location: impl Into<String>) -> Self {
        Error::Data {
            msg: msg.into(),
            location: Some(location.into()),
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code for the CLI: 2 validation, 3 data, 4 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 2,
            Error::Data { .. } | Error::Csv(_) | Error::Json(_) => 3,
            Error::Io(_) => 4,
        }
    }
}
