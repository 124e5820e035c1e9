use std::path::{Path, PathBuf};

use simpost_core::ErrorKind;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] simpost_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl std::fmt::Display) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    /// 2 for configuration problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Configuration => 2,
                ErrorKind::Numeric => 3,
            },
            CliError::Numeric(_) => 3,
            CliError::Io { .. } | CliError::Config(_) | CliError::Format { .. } => 2,
        }
    }
}
