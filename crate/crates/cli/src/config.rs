//! Layered configuration: flag > environment > config file > default.

use std::path::Path;

use parkbench_core::dataset::FilterTable;
use parkbench_core::scenario::LotConfig;
use parkbench_planner::{DataSplit, LossWeights, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SEED_ENV: &str = "PARKBENCH_SEED";

/// Contents of a TOML config file; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub scenarios: Option<usize>,
    pub lot: LotConfig,
    pub filter: FilterTable,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub data: DataSplit,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// `flag` already carries the environment fallback (clap reads the env var).
pub fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> u64 {
    flag.or(file.seed).unwrap_or(0)
}
