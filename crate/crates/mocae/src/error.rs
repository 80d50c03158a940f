use thiserror::Error;

/// Crate-wide error type. Variants map to CLI exit codes: config/argument
/// problems exit 2, IO and parse problems exit 3, numerical failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Io(_) | Error::Parse { .. } | Error::Format(_) | Error::Json(_) => 3,
            Error::Numerical(_) => 4,
            _ => 2,
        }
    }
}
