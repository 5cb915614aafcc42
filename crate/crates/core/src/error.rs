use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered {0}")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

impl Error {
    /// Prefixes the message with `context`, keeping the variant (and so the exit code).
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            Error::Shape { op, detail } => Error::Shape {
                op,
                detail: format!("{context}: {detail}"),
            },
            Error::Data(m) => Error::Data(format!("{context}: {m}")),
            Error::Config(m) => Error::Config(format!("{context}: {m}")),
            Error::NonFinite(m) => Error::NonFinite(format!("{context}: {m}")),
            other => other,
        }
    }
}
