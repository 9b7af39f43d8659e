use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::fsio::write_json;

/// Record of one command run, enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, program name excluded.
    pub args: Vec<String>,
    /// Resolved configuration after flags, environment and file.
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub wall_clock_secs: f64,
    pub status: String,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], config: serde_json::Value, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            args: args.to_vec(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_secs: 0.0,
            status: "ok".into(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_json(path, self)
    }
}
