//! Command-line front end: scenario files, assumption validation, runs,
//! oracles and trace comparison.

pub mod commands;
pub mod config;
pub mod presets;
pub mod trace_file;

use thiserror::Error;

use kmnet::{RunError, ValidationReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] kmnet::Error),
    #[error("assumption checks failed: {}", failed(.0))]
    Validation(Vec<ValidationReport>),
    #[error("run diverged at round {round} (last finite round {last_finite_round})")]
    Diverged { round: u64, last_finite_round: u64 },
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    NoOracle(String),
    #[error("empty tail: no trace rows at or after round {0}")]
    EmptyTail(u64),
    #[error("missing columns: {0}")]
    MissingColumns(String),
    #[error("thresholds not met: {0}")]
    Threshold(String),
}

fn failed(reports: &[ValidationReport]) -> String {
    reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.check.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

impl CliError {
    /// 0 success, 1 generic failure, 2 unusable configuration, 3 failed
    /// assumption checks, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Config(_) | CliError::Model(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Diverged { .. } => 4,
            _ => 1,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Validation(r) => CliError::Validation(r),
            RunError::Diverged {
                round,
                last_finite_round,
                ..
            } => CliError::Diverged {
                round,
                last_finite_round,
            },
            RunError::Model(m) => CliError::Model(m),
        }
    }
}
