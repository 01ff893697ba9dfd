use std::path::Path;

use thiserror::Error;

/// Failures surfaced by the command-line front end, each with its exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

impl From<robustgp::Error> for CliError {
    fn from(e: robustgp::Error) -> Self {
        use robustgp::Error as E;
        match e {
            E::InvalidParameter { name, reason } => CliError::config(name, reason),
            E::DimensionMismatch { .. } => CliError::config("data", e.to_string()),
            E::Parse { .. } => CliError::config("csv", e.to_string()),
            E::Io { path, source } => CliError::Io {
                path,
                message: source.to_string(),
            },
            other => CliError::Numerical(other.to_string()),
        }
    }
}
