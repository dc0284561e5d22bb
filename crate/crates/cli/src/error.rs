use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    /// `row` is the 1-based line number in the file (the header is line 1).
    #[error("row {row}, column {column}: {message}")]
    Parse { row: u64, column: String, message: String },

    #[error("cluster {cluster} appears under mechanisms {first} and {second}")]
    MixedMechanism { cluster: String, first: u64, second: u64 },

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Output(String),

    #[error(transparent)]
    Core(#[from] twostage_core::Error),
}

impl CliError {
    /// 3 for numerical failures (singular covariance, no convergence), 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
