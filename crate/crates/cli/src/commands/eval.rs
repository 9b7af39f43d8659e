use std::fs;
use std::io::BufRead;
use std::path::Path;
use std::time::Instant;

use parkbench_autodiff::ParameterStore;
use parkbench_core::metrics::{evaluate, render_table, GroundTruth, MetricsReport, Prediction};
use parkbench_core::Pose2D;
use parkbench_planner::data::net_input;
use parkbench_planner::train::{load_model, Prepared};
use parkbench_planner::{DataSplit, Planner};
use serde::{Deserialize, Serialize};

use crate::args::EvalArgs;
use crate::commands::train::split_windows;
use crate::config::load;
use crate::error::CliError;
use crate::fsio::{load_dataset, write_atomic, write_json};
use crate::manifest::RunManifest;

/// One scored window, in the ego frame at `ego`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scenario_id: String,
    pub frame_index: usize,
    pub ego: [f64; 3],
    pub waypoints: Vec<[f64; 3]>,
    pub has_heading: bool,
    pub motion_probs: Option<Vec<[f64; 2]>>,
    /// Fusion attention received by each spatial token, averaged over heads
    /// and queries, row-major over the feature grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<f64>>,
}

impl PredictionRecord {
    pub fn prediction(&self) -> Prediction {
        Prediction {
            waypoints: self.waypoints.iter().map(|&[x, y, t]| Pose2D::new(x, y, t)).collect(),
            has_heading: self.has_heading,
            motion_probs: self.motion_probs.clone(),
        }
    }
}

/// Anything that maps a window to a prediction.
pub trait Predictor {
    fn predict(&self, window: &Prepared) -> Result<PredictionRecord, CliError>;
}

fn record(window: &Prepared, waypoints: &[Pose2D], has_heading: bool, motion: Option<Vec<[f64; 2]>>) -> PredictionRecord {
    let s = &window.sample.sample;
    PredictionRecord {
        scenario_id: s.scenario_id.clone(),
        frame_index: s.frame_index,
        ego: [s.ego.x, s.ego.y, s.ego.theta],
        waypoints: waypoints.iter().map(|p| [p.x, p.y, p.theta]).collect(),
        has_heading,
        motion_probs: motion,
        attention: None,
    }
}

pub struct ModelPredictor {
    pub model: Planner,
    pub store: ParameterStore<f32>,
    pub attention: bool,
}

impl Predictor for ModelPredictor {
    fn predict(&self, window: &Prepared) -> Result<PredictionRecord, CliError> {
        let cfg = &self.model.cfg;
        let s = &window.sample.sample;
        let input = net_input::<f32>(&window.sample.bev(cfg), &s.target, cfg)?;
        let out = self.model.predict(&self.store, &input, self.attention)?;
        let mut rec = record(window, &out.waypoints, cfg.codec.with_heading, out.motion_probs);
        rec.attention = out.attention.map(|a| {
            let n = cfg.spatial_tokens();
            let mut map = vec![0.0; n];
            for row in a.chunks(n) {
                for (m, w) in map.iter_mut().zip(row) {
                    *m += w;
                }
            }
            let rows = (a.len() / n) as f64;
            map.iter().map(|m| m / rows).collect()
        });
        Ok(rec)
    }
}

/// Replays the ground truth; scores must come out perfect.
pub struct EchoPredictor;

impl Predictor for EchoPredictor {
    fn predict(&self, window: &Prepared) -> Result<PredictionRecord, CliError> {
        let gt = window.ground_truth();
        let probs = gt
            .directions
            .iter()
            .map(|d| if d.class_index() == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
            .collect();
        Ok(record(window, &gt.waypoints, true, Some(probs)))
    }
}

pub fn score(windows: &[Prepared], predictor: &dyn Predictor) -> Result<(MetricsReport, Vec<PredictionRecord>), CliError> {
    let records = windows.iter().map(|w| predictor.predict(w)).collect::<Result<Vec<_>, _>>()?;
    let preds: Vec<Prediction> = records.iter().map(PredictionRecord::prediction).collect();
    let gts: Vec<GroundTruth> = windows.iter().map(Prepared::ground_truth).collect();
    let report = evaluate(&preds, &gts).map_err(|e| CliError::Data(e.to_string()))?;
    Ok((report, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub split: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn run(args: &EvalArgs, argv: &[String]) -> Result<EvalReport, CliError> {
    let started = Instant::now();
    let file = load(args.config.as_deref())?;
    let bytes = fs::read(&args.ckpt).map_err(|e| CliError::io(&args.ckpt, e))?;
    let (meta, model, store) = load_model(&mut bytes.as_slice()).map_err(|e| match CliError::from(e) {
        CliError::Data(m) | CliError::Config(m) => CliError::Mismatch(format!("{}: {m}", args.ckpt.display())),
        other => other,
    })?;
    let data = load_dataset(&args.data, &file.lot)?;
    let split = meta.split.unwrap_or(DataSplit::default());
    let (train_w, val_w) = split_windows(&data, &model.cfg, &split, meta.seed)?;
    let (split_name, windows) = if args.all {
        ("all", [train_w, val_w].concat())
    } else {
        ("val", val_w)
    };
    if windows.is_empty() {
        return Err(CliError::Data(format!("{split_name} split has no windows")));
    }
    let predictor = ModelPredictor {
        model,
        store,
        attention: args.attention,
    };
    let (metrics, records) = score(&windows, &predictor)?;
    let label = meta.label.clone().unwrap_or_else(|| "model".into());
    let report = EvalReport {
        label: label.clone(),
        split: split_name.into(),
        metrics,
    };
    write_json(&args.report, &report)?;
    let table = render_table(&report.metrics, &label);
    let table_path = args.report.with_extension("txt");
    write_atomic(&table_path, table.as_bytes())?;
    print!("{table}");
    let mut outputs = vec![args.report.display().to_string(), table_path.display().to_string()];
    if let Some(p) = &args.predictions {
        let mut text = String::new();
        for r in &records {
            text.push_str(&serde_json::to_string(r).map_err(|e| CliError::Data(e.to_string()))?);
            text.push('\n');
        }
        write_atomic(p, text.as_bytes())?;
        outputs.push(p.display().to_string());
    }
    let config = serde_json::json!({ "checkpoint": meta, "all": args.all, "attention": args.attention });
    let mut manifest = RunManifest::new("eval", argv, config, meta.seed);
    manifest.inputs = vec![args.ckpt.display().to_string(), data.path.display().to_string()];
    manifest.outputs = outputs;
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(&sidecar(&args.report))?;
    Ok(report)
}

/// Manifest path of a single-file output.
pub fn sidecar(output: &Path) -> std::path::PathBuf {
    let name = output.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    output.with_file_name(format!("{name}.manifest.json"))
}
