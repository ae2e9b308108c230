use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

use certun_core::accountant::AccountantError;
use certun_core::experiment::ExperimentError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Accountant(#[from] AccountantError),

    #[error("{0}")]
    Experiment(#[from] ExperimentError),

    #[error("{0}")]
    Failed(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for failed runs and checks, 2 for bad input, 3 for I/O, 4 for a
    /// violated calibration hypothesis.
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Failed(_) | CliError::Experiment(_) => 1,
            CliError::Config(_) => 2,
            CliError::Accountant(AccountantError::HypothesisViolated { .. }) => 4,
            CliError::Accountant(_) => 2,
            CliError::Io { .. } => 3,
        })
    }
}
