//! Experiment driver for feedback optimization with perception in the loop.
//!
//! Each experiment is one TOML file (see [`config::ExperimentConfig`]); the
//! checked-in recipes in [`recipes`] reproduce the epidemic, unicycle and LTI
//! studies at desk scale.

pub mod config;
pub mod experiment;
pub mod output;
pub mod plot;
pub mod recipes;

use fbopt_core::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("certification refused: {0}")]
    Refusal(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Refusal(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::GainAboveCeiling { eta, eta_star } => CliError::Refusal(format!(
                "gain condition violated: eta = {eta} is not below the ceiling eta* = {eta_star}"
            )),
            Error::NoExponentialRate { .. } => CliError::Refusal(e.to_string()),
            Error::NonFinite { .. }
            | Error::NotConverged { .. }
            | Error::NotHurwitz { .. }
            | Error::Singular(_)
            | Error::TrainingDiverged { .. }
            | Error::TooShort(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
