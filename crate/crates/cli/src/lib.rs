//! Library side of the `mvctest` command: data ingestion, command
//! implementations and report rendering. `main.rs` only parses arguments.

pub mod commands;
pub mod dataset;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Singular(mvc::Error),

    /// Malformed CSV, hypothesis, scenario file or argument.
    #[error("{0}")]
    Input(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Singular(_) => 2,
            CliError::Input(_) => 3,
            CliError::Io(_) | CliError::Other(_) => 1,
        }
    }
}

impl From<mvc::Error> for CliError {
    fn from(e: mvc::Error) -> Self {
        match e {
            mvc::Error::SingularDesign { .. } => CliError::Singular(e),
            mvc::Error::InvalidConcentrations(_)
            | mvc::Error::DimensionMismatch(_)
            | mvc::Error::InvalidArgument(_) => CliError::Input(e.to_string()),
        }
    }
}
