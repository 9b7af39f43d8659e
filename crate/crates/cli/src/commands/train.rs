use std::path::{Path, PathBuf};
use std::time::Instant;

use parkbench_core::dataset::split_dataset;
use parkbench_planner::data::samples_from_records;
use parkbench_planner::train::{prepare, save_model, CheckpointMeta, Prepared};
use parkbench_planner::{Ablation, DataSplit, ModelConfig, TrainConfig, TrainStatus};
use serde::Serialize;

use crate::args::TrainArgs;
use crate::config::{load, resolve_seed, FileConfig};
use crate::error::CliError;
use crate::fsio::{load_dataset, write_atomic, Dataset, MANIFEST_FILE};
use crate::manifest::RunManifest;

pub const CHECKPOINT_FILE: &str = "model.pkbn";
pub const TRACE_FILE: &str = "trace.jsonl";

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub best_epoch: Option<usize>,
    pub best_val_l2: Option<f64>,
    pub train_windows: usize,
    pub val_windows: usize,
    pub status: TrainStatus,
}

/// Fully resolved settings of a training run.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub ablation: Option<Ablation>,
    pub file: FileConfig,
}

pub fn resolve(args: &TrainArgs) -> Result<(Resolved, u64), CliError> {
    let mut file = load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &file);
    let ablation = args
        .ablation
        .as_deref()
        .map(str::parse::<Ablation>)
        .transpose()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(a) = ablation {
        a.apply(&mut file.model, &mut file.train);
    }
    let t = &mut file.train;
    if let Some(e) = args.epochs {
        t.epochs = e;
    }
    if let Some(b) = args.batch {
        t.batch = b;
    }
    if let Some(lr) = args.lr {
        t.lr_peak = lr;
    }
    if args.val_limit.is_some() {
        t.val_limit = args.val_limit;
    }
    if let Some(s) = args.stride {
        file.data.stride = s;
    }
    t.seed = seed;
    file.seed = Some(seed);
    file.model.validate()?;
    file.train.validate()?;
    file.loss.validate()?;
    if !(file.data.train_ratio > 0.0 && file.data.train_ratio < 1.0) || file.data.stride == 0 {
        return Err(CliError::Config("data split needs 0 < train_ratio < 1 and stride > 0".into()));
    }
    Ok((Resolved { ablation, file }, seed))
}

/// Train and validation windows of `data` under `split`.
pub fn split_windows(
    data: &Dataset,
    model: &ModelConfig,
    split: &DataSplit,
    seed: u64,
) -> Result<(Vec<Prepared>, Vec<Prepared>), CliError> {
    let (tr, va) = split_dataset(data.records.clone(), split.train_ratio, seed, |r| r.scenario_id.as_str())?;
    let windows = |recs: &[_]| -> Result<Vec<Prepared>, CliError> {
        Ok(prepare(samples_from_records(recs, &data.lot, model.horizon, split.stride)?, model)?)
    };
    Ok((windows(&tr)?, windows(&va)?))
}

fn checkpoint_bytes(meta: &CheckpointMeta, store: &parkbench_autodiff::ParameterStore<f32>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    save_model(&mut buf, meta, store)?;
    Ok(buf)
}

pub fn run(args: &TrainArgs, argv: &[String]) -> Result<TrainSummary, CliError> {
    let started = Instant::now();
    let (resolved, seed) = resolve(args)?;
    let file = &resolved.file;
    let data = load_dataset(&args.data, &file.lot)?;
    let (train_set, val_set) = split_windows(&data, &file.model, &file.data, seed)?;
    if train_set.is_empty() {
        return Err(CliError::Data("training split has no windows".into()));
    }
    eprintln!(
        "training {} on {} windows, validating on {}",
        resolved.ablation.map(|a| a.to_string()).unwrap_or_else(|| "configured model".into()),
        train_set.len(),
        val_set.len()
    );
    let train_cfg: &TrainConfig = &file.train;
    let outcome = parkbench_planner::train(&train_set, &val_set, &file.model, train_cfg, &file.loss, |line| {
        eprintln!(
            "epoch {:>3} lr {:.2e} loss {:.4} val_l2 {} ({:.1} s)",
            line.epoch,
            line.lr,
            line.loss_total,
            line.val_l2.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            line.secs
        )
    })?;

    let mut trace = String::new();
    for line in &outcome.trace {
        trace.push_str(&serde_json::to_string(line).map_err(|e| CliError::Data(e.to_string()))?);
        trace.push('\n');
    }
    let trace_path = args.out.join(TRACE_FILE);
    write_atomic(&trace_path, trace.as_bytes())?;
    let meta = CheckpointMeta {
        model: file.model.clone(),
        label: resolved.ablation.map(|a| a.to_string()),
        seed,
        split: Some(file.data),
    };
    let ckpt = args.out.join(CHECKPOINT_FILE);
    write_atomic(&ckpt, &checkpoint_bytes(&meta, &outcome.best)?)?;

    let config = serde_json::to_value(&resolved).map_err(|e| CliError::Config(e.to_string()))?;
    let mut manifest = RunManifest::new("train", argv, config, seed);
    manifest.inputs = vec![data.path.display().to_string()];
    manifest.outputs = vec![ckpt.display().to_string(), trace_path.display().to_string()];
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    if let TrainStatus::Diverged { epoch, step, reason } = &outcome.status {
        manifest.status = format!("diverged at epoch {epoch}, step {step}: {reason}");
    }
    manifest.write(&args.out.join(MANIFEST_FILE))?;

    let best_val_l2 = outcome
        .best_epoch
        .and_then(|e| outcome.trace.get(e - 1))
        .and_then(|t| t.val_l2);
    if let TrainStatus::Diverged { epoch, step, reason } = &outcome.status {
        return Err(CliError::Numeric(format!(
            "training diverged at epoch {epoch}, step {step}: {reason}; last finite weights kept in {}",
            ckpt.display()
        )));
    }
    Ok(TrainSummary {
        checkpoint: ckpt,
        best_epoch: outcome.best_epoch,
        best_val_l2,
        train_windows: train_set.len(),
        val_windows: val_set.len(),
        status: outcome.status,
    })
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT_FILE)
}
