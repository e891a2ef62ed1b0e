use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("range error on {axis} axis: {msg}")]
    Range { axis: &'static str, msg: String },
    #[error("spec error: {0}")]
    Spec(String),
    #[error("state error: {0}")]
    State(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("stability error: {0}")]
    Stability(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate range: {0}")]
    DegenerateRange(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
macro_rules! spec_err {
    ($($arg:tt)*) => { $crate::error::Error::Spec(format!($($arg)*)) };
}
macro_rules! arg_err {
    ($($arg:tt)*) => { $crate::error::Error::Argument(format!($($arg)*)) };
}
pub(crate) use {arg_err, shape_err, spec_err};
