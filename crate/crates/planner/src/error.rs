use parkbench_autodiff::AutodiffError;
use parkbench_core::error::{DatasetError, EncodingError, MetricsError, ScenarioError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged { epoch: usize, step: usize, reason: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
