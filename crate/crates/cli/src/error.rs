use std::path::PathBuf;

use sact::{Error as CoreError, TensorError};
use thiserror::Error;

/// Failure of a command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 0 success, 2 config, 3 data, 4 NaN; anything else is 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Numeric(_) => 4,
            Self::Io { .. } | Self::Failed(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(c) => Self::Config(c.0),
            CoreError::Data(d) => Self::Data(d.to_string()),
            e @ (CoreError::NonFinite { .. } | CoreError::GradCheck { .. }) => Self::Numeric(e.to_string()),
            CoreError::Tensor(t @ TensorError::NonFinite { .. }) => Self::Numeric(t.to_string()),
            CoreError::Tensor(t) => Self::Failed(t.to_string()),
        }
    }
}

impl From<sact::ConfigError> for CliError {
    fn from(e: sact::ConfigError) -> Self {
        Self::Config(e.0)
    }
}

impl From<sact::DataError> for CliError {
    fn from(e: sact::DataError) -> Self {
        Self::Data(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
