use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures that stop a subcommand before its checks complete.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("numerical failure: {0}")]
    Numerics(#[from] mmv_core::Error),
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// `2` for configuration and IO problems, `1` when the numerics refuse
    /// (a failed check in all but name).
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Io { .. } | CliError::Csv { .. } => 2,
            CliError::Numerics(_) => 1,
        }
    }
}
