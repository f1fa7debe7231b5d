//! Command-line front end: run configuration, subcommands, and the audits
//! behind `gradcheck`.

pub mod audit;
pub mod commands;
pub mod config;

pub use commands::{run_command, Command, Outcome};
pub use config::{parse_overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] fan_core::Error),

    /// Training stopped on a numeric failure; outputs up to that point were
    /// written.
    #[error("training aborted: {0}")]
    Aborted(String),

    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 1 for bad input, 2 for numeric trouble or a failed check.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) if e.is_numeric() => 2,
            CliError::Core(_) => 1,
            CliError::Aborted(_) | CliError::CheckFailed(_) => 2,
        }
    }
}
