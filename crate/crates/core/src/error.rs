use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("parameter error: {0}")]
    Param(String),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: String, index: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("load error in {}: byte offset {offset}: {msg}", path.display())]
    Load {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}

macro_rules! param_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Param(format!($($arg)*))
    };
}

pub(crate) use param_err;
pub(crate) use shape_err;
