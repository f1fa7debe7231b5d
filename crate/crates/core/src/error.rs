use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {what} = {index}, limit {limit}")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unknown instruction id {0}")]
    UnknownInstruction(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dataset {0} contains no usable demonstrations")]
    EmptyDataset(PathBuf),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// True for failures that stem from numbers going bad mid-run rather than
    /// from bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::Diverged(_) | Error::Solver(_)
        )
    }
}
