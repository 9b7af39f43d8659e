//! Mini-batch training with scheduled sampling, validation and checkpoints.

use std::io::{Read, Write};

use parkbench_autodiff::checkpoint::{read_checkpoint, write_checkpoint};
use parkbench_autodiff::{adam_step, Element, Gradients, Graph, LrSchedule, ParameterStore, Tensor, Var};
use parkbench_core::metrics::{evaluate, GroundTruth, MetricsReport, Prediction};
use parkbench_core::scenario::mix_seed;
use parkbench_core::Pose2D;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DataSplit, LossWeights, ModelConfig, TrainConfig};
use crate::data::{net_input, PlannerSample};
use crate::error::PlannerError;
use crate::loss::{motion_loss, waypoint_loss, LossParts};
use crate::model::{argmax, Planner, PlannerOutput};

const AUG_SALT: u64 = 0xA06E;
const SS_SALT: u64 = 0x55A7;

/// Probability of feeding the ground-truth token at 1-based `epoch`: one
/// before `start`, zero from `end`, linear in between.
pub fn scheduled_sampling_prob(epoch: usize, start: usize, end: usize) -> f64 {
    if epoch < start {
        1.0
    } else if epoch >= end {
        0.0
    } else {
        1.0 - (epoch - start) as f64 / (end - start) as f64
    }
}

/// Uniform jitter of the target slot, position in metres and yaw in degrees.
pub fn augment_target(target: &Pose2D, pos: f64, yaw_deg: f64, rng: &mut impl Rng) -> Pose2D {
    let mut draw = |h: f64| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
    let dx = draw(pos);
    let dy = draw(pos);
    let dth = draw(yaw_deg.to_radians());
    Pose2D::new(target.x + dx, target.y + dy, target.theta + dth)
}

/// A sample with its supervision sequences precomputed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub sample: PlannerSample,
    /// Framed trajectory tokens, `seq_len` long.
    pub tokens: Vec<u32>,
    /// Motion class per step, forward = 0.
    pub labels: Vec<usize>,
    pub shifts: Vec<usize>,
}

impl Prepared {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            waypoints: self.sample.sample.future_waypoints.clone(),
            directions: self.sample.sample.filled_directions(),
        }
    }
}

pub fn prepare(samples: Vec<PlannerSample>, cfg: &ModelConfig) -> Result<Vec<Prepared>, PlannerError> {
    samples
        .into_iter()
        .map(|sample| {
            let s = &sample.sample;
            if s.horizon() != cfg.horizon {
                return Err(PlannerError::Input(format!(
                    "{}: horizon {} but the model expects {}",
                    s.scenario_id,
                    s.horizon(),
                    cfg.horizon
                )));
            }
            let seq = cfg.codec.serialize_waypoints(&s.future_waypoints, cfg.seq_len());
            let labels = s.filled_directions().iter().map(|d| d.class_index()).collect();
            let shifts = s.shift_steps.clone();
            Ok(Prepared {
                tokens: seq.tokens,
                labels,
                shifts,
                sample,
            })
        })
        .collect()
}

/// Decoder inputs for one scheduled-sampling pass. Position 0 stays BOS;
/// each later input keeps the ground truth with probability `teacher_prob`
/// and otherwise takes the model's own prediction for that slot.
pub fn mix_inputs(gt: &[u32], predicted: &[u32], teacher_prob: f64, rng: &mut impl Rng) -> Vec<u32> {
    let mut out = Vec::with_capacity(gt.len());
    out.push(gt[0]);
    for t in 1..gt.len() {
        let keep = rng.random::<f64>() < teacher_prob;
        out.push(if keep { gt[t] } else { predicted[t - 1] });
    }
    out
}

/// Builds the loss of one sample on `g`.
///
/// With `teacher_prob < 1` a first teacher-forced pass supplies the model's
/// predictions, which are mixed into the inputs of the differentiated pass.
#[allow(clippy::too_many_arguments)]
pub fn sample_loss<T: Element>(
    model: &Planner,
    g: &mut Graph<T>,
    p: &Prepared,
    target: &Pose2D,
    weights: &LossWeights,
    train: &TrainConfig,
    teacher_prob: f64,
    rng: &mut impl Rng,
) -> Result<(Var, LossParts), PlannerError> {
    let cfg = &model.cfg;
    let codec = &cfg.codec;
    let input = net_input::<T>(&p.sample.bev(cfg), target, cfg)?;
    let enc = model.encode(g, &input)?;
    let gt_in = &p.tokens[..p.tokens.len() - 1];
    let targets = &p.tokens[1..];
    let inputs = if teacher_prob < 1.0 {
        let (logits, _) = model.trajectory_decode(g, enc.f_enhanced, gt_in)?;
        let n_u = codec.n_u as usize;
        let predicted: Vec<u32> = g
            .value(logits)
            .data
            .chunks(codec.traj_vocab())
            .map(|row| argmax(&row[..n_u]) as u32)
            .collect();
        mix_inputs(gt_in, &predicted, teacher_prob, rng)
    } else {
        gt_in.to_vec()
    };
    let (logits, hidden) = model.trajectory_decode(g, enc.f_enhanced, &inputs)?;
    let waypoints = &p.sample.sample.future_waypoints;
    let (wp, wp_mse, wp_token_ce) = waypoint_loss(g, logits, targets, waypoints, codec, train.objective)?;
    let mut parts = LossParts {
        wp: scalar(g, wp),
        wp_mse,
        wp_token_ce,
        ..Default::default()
    };
    let mut total = g.scale(wp, T::lit(weights.waypoints));
    if model.has_motion_branch() {
        let mlog = model.motion_decode(g, hidden, enc.f_enhanced)?;
        let (m, ce, smooth) = motion_loss(g, mlog, &p.labels, &p.shifts, weights)?;
        parts.ce = ce;
        parts.smooth = smooth;
        let m = g.scale(m, T::lit(weights.motion));
        total = g.add(total, m)?;
    }
    parts.total = scalar(g, total);
    Ok((total, parts))
}

fn scalar<T: Element>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).item().to_f64().unwrap_or(f64::NAN)
}

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub lr: f64,
    pub teacher_prob: f64,
    pub loss_total: f64,
    pub loss_wp: f64,
    pub loss_ce: f64,
    pub loss_smooth: f64,
    pub val_l2: Option<f64>,
    pub val_motion_acc: Option<f64>,
    /// Wall-clock time; kept out of the serialized trace so it stays reproducible.
    #[serde(skip)]
    pub secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainStatus {
    Completed,
    /// Stopped on a non-finite loss or gradient; the stores hold the last
    /// finite parameters.
    Diverged { epoch: usize, step: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Planner,
    /// Parameters with the lowest validation L2, or the final ones without
    /// a validation set.
    pub best: ParameterStore<f32>,
    pub best_epoch: Option<usize>,
    pub last: ParameterStore<f32>,
    pub trace: Vec<EpochTrace>,
    /// Mean batch loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub status: TrainStatus,
}

/// Trains a fresh model. `on_epoch` sees each trace line as it is produced.
pub fn train(
    train_set: &[Prepared],
    val_set: &[Prepared],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    weights: &LossWeights,
    mut on_epoch: impl FnMut(&EpochTrace),
) -> Result<TrainOutcome, PlannerError> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    weights.validate()?;
    if train_set.is_empty() {
        return Err(PlannerError::Input("empty training set".into()));
    }
    let mut store = ParameterStore::<f32>::new();
    let model = Planner::new(model_cfg.clone(), &mut store, train_cfg.seed)?;
    let val_set = match train_cfg.val_limit {
        Some(n) => &val_set[..n.min(val_set.len())],
        None => val_set,
    };

    let spe = train_set.len().div_ceil(train_cfg.batch);
    let sched = LrSchedule::from_epochs(
        train_cfg.lr_peak,
        train_cfg.lr_floor,
        train_cfg.warmup_epochs,
        train_cfg.epochs,
        spe,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(train_cfg.seed, 0x5EED));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grads = Gradients::zeros_like(&store);
    let mut best: Option<(f64, usize, ParameterStore<f32>)> = None;
    let mut trace = Vec::new();
    let mut step_losses = Vec::new();
    let mut status = TrainStatus::Completed;

    'epochs: for epoch in 1..=train_cfg.epochs {
        let started = std::time::Instant::now();
        let teacher_prob = if train_cfg.scheduled_sampling {
            scheduled_sampling_prob(epoch, train_cfg.ss_start_epoch, train_cfg.ss_end_epoch)
        } else {
            1.0
        };
        order.shuffle(&mut shuffle_rng);
        let mut sums = LossParts::default();
        let mut lr = 0.0;
        for (b, batch) in order.chunks(train_cfg.batch).enumerate() {
            lr = sched.lr_at(epoch - 1, b, spe);
            grads.zero();
            let inv = 1.0 / batch.len() as f64;
            let mut batch_parts = LossParts::default();
            for &idx in batch {
                let key = ((epoch as u64) << 32) | idx as u64;
                let mut aug_rng = ChaCha8Rng::seed_from_u64(mix_seed(train_cfg.seed ^ AUG_SALT, key));
                let mut ss_rng = ChaCha8Rng::seed_from_u64(mix_seed(train_cfg.seed ^ SS_SALT, key));
                let p = &train_set[idx];
                let target = augment_target(
                    &p.sample.sample.target,
                    train_cfg.noise_pos,
                    train_cfg.noise_yaw_deg,
                    &mut aug_rng,
                );
                let mut g = Graph::new(&store);
                let (loss, parts) = sample_loss(&model, &mut g, p, &target, weights, train_cfg, teacher_prob, &mut ss_rng)?;
                if !parts.total.is_finite() {
                    status = TrainStatus::Diverged {
                        epoch,
                        step: b,
                        reason: format!("non-finite loss on sample {idx}"),
                    };
                    break 'epochs;
                }
                let scaled = g.scale(loss, inv as f32);
                let node_grads = g.backward(scaled)?;
                g.accumulate_params(&node_grads, &mut grads);
                batch_parts.add_scaled(&parts, inv);
            }
            if let Err(e) = adam_step(&mut store, &mut grads, lr, train_cfg.clip) {
                status = TrainStatus::Diverged {
                    epoch,
                    step: b,
                    reason: e.to_string(),
                };
                break 'epochs;
            }
            step_losses.push(batch_parts.total);
            sums.add_scaled(&batch_parts, batch.len() as f64 / train_set.len() as f64);
        }

        let (val_l2, val_motion_acc) = if val_set.is_empty() {
            (None, None)
        } else {
            let report = validate(&model, &store, val_set)?.0;
            (Some(report.l2_mean), report.motion_acc)
        };
        if let Some(l2) = val_l2 {
            if best.as_ref().is_none_or(|(b, _, _)| l2 < *b) {
                best = Some((l2, epoch, store.clone()));
            }
        }
        let line = EpochTrace {
            epoch,
            lr,
            teacher_prob,
            loss_total: sums.total,
            loss_wp: sums.wp,
            loss_ce: sums.ce,
            loss_smooth: sums.smooth,
            val_l2,
            val_motion_acc,
            secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&line);
        trace.push(line);
    }

    let (best, best_epoch) = match best {
        Some((_, e, s)) => (s, Some(e)),
        None => (store.clone(), None),
    };
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        last: store,
        trace,
        step_losses,
        status,
    })
}

/// Greedy predictions for `samples` with the true (unperturbed) targets.
pub fn predict_all<T: Element>(
    model: &Planner,
    store: &ParameterStore<T>,
    samples: &[Prepared],
) -> Result<Vec<PlannerOutput>, PlannerError> {
    samples
        .iter()
        .map(|p| {
            let input = net_input::<T>(&p.sample.bev(&model.cfg), &p.sample.sample.target, &model.cfg)?;
            model.predict(store, &input, false)
        })
        .collect()
}

pub fn to_prediction(model: &Planner, out: &PlannerOutput) -> Prediction {
    Prediction {
        waypoints: out.waypoints.clone(),
        has_heading: model.cfg.codec.with_heading,
        motion_probs: out.motion_probs.clone(),
    }
}

/// Metrics report and per-sample predictions over `samples`.
pub fn validate<T: Element>(
    model: &Planner,
    store: &ParameterStore<T>,
    samples: &[Prepared],
) -> Result<(MetricsReport, Vec<Prediction>), PlannerError> {
    let preds: Vec<Prediction> = predict_all(model, store, samples)?
        .iter()
        .map(|o| to_prediction(model, o))
        .collect();
    let gts: Vec<GroundTruth> = samples.iter().map(Prepared::ground_truth).collect();
    Ok((evaluate(&preds, &gts)?, preds))
}

/// JSON blob stored in the checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Split that produced the validation windows, seeded by `seed`.
    #[serde(default)]
    pub split: Option<DataSplit>,
}

pub fn save_model(w: &mut impl Write, meta: &CheckpointMeta, store: &ParameterStore<f32>) -> Result<(), PlannerError> {
    let json = serde_json::to_string(meta).map_err(|e| PlannerError::Config(e.to_string()))?;
    write_checkpoint(w, &json, store)?;
    Ok(())
}

/// Rebuilds the model from the stored config and loads its weights.
pub fn load_model(r: &mut impl Read) -> Result<(CheckpointMeta, Planner, ParameterStore<f32>), PlannerError> {
    let ck = read_checkpoint(r)?;
    let meta: CheckpointMeta =
        serde_json::from_str(&ck.config).map_err(|e| PlannerError::Config(format!("checkpoint config: {e}")))?;
    meta.model.validate()?;
    let mut store = ParameterStore::new();
    let model = Planner::new(meta.model.clone(), &mut store, meta.seed)?;
    let tensors: Vec<(String, Tensor<f32>)> = ck.tensors;
    store.load(&tensors)?;
    Ok((meta, model, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_schedule_endpoints() {
        assert_eq!(scheduled_sampling_prob(1, 5, 25), 1.0);
        assert_eq!(scheduled_sampling_prob(4, 5, 25), 1.0);
        assert_eq!(scheduled_sampling_prob(5, 5, 25), 1.0);
        assert!((scheduled_sampling_prob(15, 5, 25) - 0.5).abs() < 1e-12);
        assert_eq!(scheduled_sampling_prob(25, 5, 25), 0.0);
        assert_eq!(scheduled_sampling_prob(30, 5, 25), 0.0);
    }

    #[test]
    fn augmentation_stays_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Pose2D::new(5.0, -2.0, 0.4);
        for _ in 0..200 {
            let a = augment_target(&t, 0.3, 2.0, &mut rng);
            assert!((a.x - t.x).abs() <= 0.3 && (a.y - t.y).abs() <= 0.3);
            assert!((a.theta - t.theta).abs() <= 2f64.to_radians() + 1e-12);
        }
        assert_eq!(augment_target(&t, 0.0, 0.0, &mut rng), t);
    }

    #[test]
    fn mixing_extremes() {
        let gt = [9, 1, 2, 3];
        let pred = [4, 5, 6, 7];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(mix_inputs(&gt, &pred, 1.0, &mut rng), gt);
        assert_eq!(mix_inputs(&gt, &pred, 0.0, &mut rng), vec![9, 4, 5, 6]);
    }
}
