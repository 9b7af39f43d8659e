use std::time::Instant;

use parkbench_core::dataset::{count_gear_shifts, TrajectoryRecord};
use parkbench_core::scenario::{regenerate_vehicles, slot_at};
use parkbench_core::{OrientedBox, Pose2D};

use crate::args::PlotArgs;
use crate::commands::eval::{read_predictions, sidecar, PredictionRecord};
use crate::config::load;
use crate::error::CliError;
use crate::fsio::{load_dataset, write_atomic};
use crate::manifest::RunManifest;
use crate::svg::{render, AttentionOverlay, Scene};

const MARGIN: f64 = 2.0;

/// Frames where the driving direction flips, stationary gaps skipped.
pub fn shift_points(rec: &TrajectoryRecord) -> Vec<(f64, f64)> {
    let mut last = None;
    let mut out = Vec::new();
    for f in &rec.frames {
        if let Some(d) = f.5.direction() {
            if last.is_some_and(|l| l != d) {
                out.push((f.0, f.1));
            }
            last = Some(d);
        }
    }
    debug_assert_eq!(out.len(), count_gear_shifts(&rec.frames.iter().map(|f| f.5).collect::<Vec<_>>()));
    out
}

fn pick_prediction<'a>(preds: &'a [PredictionRecord], scenario: &str, frame: Option<usize>) -> Option<&'a PredictionRecord> {
    preds
        .iter()
        .filter(|p| p.scenario_id == scenario && frame.is_none_or(|f| p.frame_index == f))
        .min_by_key(|p| p.frame_index)
}

pub fn run(args: &PlotArgs, argv: &[String]) -> Result<Scene, CliError> {
    let started = Instant::now();
    let file = load(args.config.as_deref())?;
    let data = load_dataset(&args.traj, &file.lot)?;
    let rec = match &args.scenario {
        Some(id) => data.records.iter().find(|r| &r.scenario_id == id),
        None => data.records.first(),
    }
    .ok_or_else(|| CliError::Data("no matching scenario in the dataset".into()))?;
    let lot = data.lot.build_lot();
    let [tx, ty, tt] = rec.target_slot;
    let target = Pose2D::new(tx, ty, tt);
    let slot_id = slot_at(&lot, &target)
        .ok_or_else(|| CliError::Data(format!("{}: target matches no slot", rec.scenario_id)))?;
    let vehicles = regenerate_vehicles(rec.seed, slot_id, &data.lot)?;
    let slot_box = |s: &parkbench_core::scenario::SlotSpec| {
        OrientedBox {
            center: s.center,
            half_length: s.length / 2.0,
            half_width: s.width / 2.0,
        }
        .corners()
    };
    let (x0, y0, x1, y1) = data.lot.boundary();
    let mut scene = Scene {
        bounds: (x0 - MARGIN, y0 - MARGIN, x1 + MARGIN, y1 + MARGIN),
        slots: lot.iter().map(slot_box).collect(),
        target: lot.iter().find(|s| s.slot_id == slot_id).map(slot_box),
        vehicles: vehicles.iter().map(OrientedBox::corners).collect(),
        gt: rec.frames.iter().map(|f| (f.0, f.1)).collect(),
        shifts: shift_points(rec),
        title: rec.scenario_id.clone(),
        ..Default::default()
    };
    let mut inputs = vec![data.path.display().to_string()];
    if let Some(path) = &args.pred {
        let preds = read_predictions(path)?;
        let p = pick_prediction(&preds, &rec.scenario_id, args.frame)
            .ok_or_else(|| CliError::Data(format!("{}: no prediction for {}", path.display(), rec.scenario_id)))?;
        let ego = Pose2D::new(p.ego[0], p.ego[1], p.ego[2]);
        let mut line = vec![(ego.x, ego.y)];
        line.extend(p.waypoints.iter().map(|w| ego.transform_point(w[0], w[1])));
        scene.pred = Some(line);
        if args.attention {
            let weights = p
                .attention
                .clone()
                .ok_or_else(|| CliError::Data(format!("{}: prediction has no attention map", path.display())))?;
            let cfg = &file.model;
            let side = cfg.feat_hw;
            if weights.len() != side * side {
                return Err(CliError::Mismatch(format!(
                    "attention map of {} cells for a {side}x{side} grid",
                    weights.len()
                )));
            }
            scene.attention = Some(AttentionOverlay {
                ego,
                origin: -cfg.bev_extent() - cfg.bev_padding() as f64 * cfg.bev_resolution,
                cell: cfg.bev_patch as f64 * cfg.bev_resolution,
                side,
                weights,
            });
        }
        inputs.push(path.display().to_string());
    } else if args.attention {
        return Err(CliError::Config("--attention needs --pred".into()));
    }
    write_atomic(&args.out, render(&scene).as_bytes())?;
    let config = serde_json::json!({
        "scenario": rec.scenario_id,
        "frame": args.frame,
        "attention": args.attention,
        "model": file.model,
    });
    let mut manifest = RunManifest::new("plot", argv, config, rec.seed);
    manifest.inputs = inputs;
    manifest.outputs = vec![args.out.display().to_string()];
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(&sidecar(&args.out))?;
    Ok(scene)
}
