use thiserror::Error;

use sequoia_core::optimizer::CostModelError;
use sequoia_core::planner::PlanError;
use sequoia_core::simlab::SimError;
use sequoia_core::tree::{AcceptanceError, TreeError};
use sequoia_core::verifiers::VerifyError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn input(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{context}: {e}"))
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<AcceptanceError> for CliError {
    fn from(e: AcceptanceError) -> Self {
        CliError::Input(format!("invalid acceptance vector: {e}"))
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CostModelError> for CliError {
    fn from(e: CostModelError) -> Self {
        CliError::Input(format!("cost model: {e}"))
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::UnsupportedVerifier(_) => CliError::Input(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::ThreadPool(_) | SimError::Csv(_) | SimError::Verify(_) => CliError::Internal(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}
