use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("journey {id}: invalid {field}: {message}")]
    Invariant {
        id: String,
        field: &'static str,
        message: String,
    },
    #[error("{0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn invariant(id: &str, field: &'static str, message: impl Into<String>) -> Self {
        Error::Invariant {
            id: id.to_string(),
            field,
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage, 2 data or invariant, 3 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numerical(_) => 3,
            Error::Tensor(_)
            | Error::Io { .. }
            | Error::Parse { .. }
            | Error::Invariant { .. }
            | Error::Data(_) => 2,
        }
    }
}
