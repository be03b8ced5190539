use std::path::PathBuf;

use thiserror::Error;

/// Process exit status: success.
pub const EXIT_OK: i32 = 0;
/// Process exit status: numerical failure or failed acceptance check.
pub const EXIT_FAILURE: i32 = 1;
/// Process exit status: bad usage, configuration or input file.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read {}: {message}", .path.display())]
    Input { path: PathBuf, message: String },

    #[error("cannot write {}: {source}", .path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Failure(String),

    #[error(transparent)]
    Core(#[from] bpnp::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Input { .. } => EXIT_USAGE,
            CliError::Core(bpnp::Error::InvalidInput(_)) => EXIT_USAGE,
            CliError::Output { .. } | CliError::Failure(_) | CliError::Core(_) => EXIT_FAILURE,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
