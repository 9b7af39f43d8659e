//! Atomic file output and dataset discovery.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use parkbench_core::dataset::{read_jsonl, TrajectoryRecord};
use parkbench_core::scenario::LotConfig;

use crate::error::CliError;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// A dataset file plus the lot it was generated on.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub path: PathBuf,
    pub records: Vec<TrajectoryRecord>,
    pub lot: LotConfig,
}

/// Accepts a dataset directory or a JSONL file. The lot comes from the
/// generator manifest next to it, else `fallback`.
pub fn load_dataset(path: &Path, fallback: &LotConfig) -> Result<Dataset, CliError> {
    let file = if path.is_dir() { path.join(DATASET_FILE) } else { path.to_path_buf() };
    let f = fs::File::open(&file).map_err(|e| CliError::io(&file, e))?;
    let records = read_jsonl(BufReader::new(f))
        .map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
    let manifest = file.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
    let lot = match fs::read_to_string(&manifest) {
        Ok(text) => {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", manifest.display())))?;
            match v.pointer("/config/lot") {
                Some(lot) => serde_json::from_value(lot.clone())
                    .map_err(|e| CliError::Data(format!("{}: lot: {e}", manifest.display())))?,
                None => fallback.clone(),
            }
        }
        Err(_) => fallback.clone(),
    };
    Ok(Dataset {
        path: file,
        records,
        lot,
    })
}
