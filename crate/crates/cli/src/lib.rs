//! Command-line harness for `vqreg`: dataset generation, fitting, CVQF
//! tabulation, rearrangement, evaluation and parameter sweeps.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod plot;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("corrupt artifact: {0}")]
    Corrupt(String),
}

impl CliError {
    /// 2 for configuration problems, 3 for numeric failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) | CliError::Corrupt(_) => 4,
        }
    }
}

impl From<vqreg::Error> for CliError {
    fn from(e: vqreg::Error) -> Self {
        use vqreg::Error as E;
        match e {
            E::Numeric { .. } | E::Divergence { .. } | E::Infeasible | E::Unbounded | E::Calibration { .. } => {
                CliError::Numeric(e.to_string())
            }
            E::Io(_) | E::Csv(_) => CliError::Io(e.to_string()),
            E::Size(_) | E::Shape(_) | E::InvalidArgument(_) | E::Unsupported(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub use commands::{run, Cli, Command};
