//! CLI-level errors with the exit-code contract: 0 success, 2 config
//! error, 3 training divergence, 1 anything else.

use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum CliError {
    /// Unparseable, invalid, or conflicting configuration.
    Config(String),
    /// Dataset or artifact file problem, with the offending path.
    Io(PathBuf, std::io::Error),
    /// Malformed file contents (datasets, checkpoints, records).
    Format(PathBuf, String),
    /// Error surfaced by the engine.
    Core(lightcl_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(lightcl_core::Error::NonFinite { .. }) => 3,
            CliError::Core(lightcl_core::Error::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(path.to_path_buf(), err)
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        CliError::Format(path.to_path_buf(), msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Io(path, err) => write!(f, "{}: {err}", path.display()),
            CliError::Format(path, msg) => write!(f, "{}: {msg}", path.display()),
            CliError::Core(err) => write!(f, "{err}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<lightcl_core::Error> for CliError {
    fn from(err: lightcl_core::Error) -> Self {
        CliError::Core(err)
    }
}
