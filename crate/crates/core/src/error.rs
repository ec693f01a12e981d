use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The variants are coarse on purpose: the CLI maps them onto a small set of
/// exit codes (see [`TceError::exit_code`]).
#[derive(Debug, Error)]
pub enum TceError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("incompatible inputs: {0}")]
    Compat(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl TceError {
    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        TceError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 config, 3 numeric, 4 compatibility,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            TceError::Config(_) => 2,
            TceError::Numeric(_) => 3,
            TceError::Compat(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = TceError> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::TceError::Shape(format!($($arg)*)) };
}
pub(crate) use shape_err;
