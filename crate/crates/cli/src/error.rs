use parkbench_autodiff::AutodiffError;
use parkbench_core::error::{DatasetError, ScenarioError};
use parkbench_planner::PlannerError;
use thiserror::Error;

/// Command failure with a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    /// Checkpoint and data or model config disagree.
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Mismatch(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::InvalidLot(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::NonFiniteGradient(_) => CliError::Numeric(e.to_string()),
            AutodiffError::Checkpoint(_) | AutodiffError::Io(_) => CliError::Data(e.to_string()),
            _ => CliError::Mismatch(e.to_string()),
        }
    }
}

impl From<PlannerError> for CliError {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::Config(m) => CliError::Config(m),
            PlannerError::Diverged { .. } => CliError::Numeric(e.to_string()),
            PlannerError::Autodiff(a) => a.into(),
            PlannerError::Scenario(s) => s.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}
