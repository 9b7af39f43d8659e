//! Waypoint and motion objectives, assembled on the tape.

use parkbench_autodiff::gradcheck::GradcheckCase;
use parkbench_autodiff::nn::uniform;
use parkbench_autodiff::{AutodiffError, Element, Graph, Tensor, Var};
use parkbench_core::encoding::SequenceCodec;
use parkbench_core::geometry::wrap_angle;
use parkbench_core::Pose2D;

use crate::config::{LossWeights, WaypointObjective};
use crate::error::PlannerError;

/// Scalar values of every loss term of one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    /// Waypoint objective before weighting.
    pub wp: f64,
    pub wp_mse: f64,
    pub wp_token_ce: f64,
    /// Motion cross-entropy before weighting.
    pub ce: f64,
    pub smooth: f64,
}

impl LossParts {
    /// `λ_wp L_wp + λ_mot (L_CE + λ_smooth L_smooth)` recomputed from the parts.
    pub fn resum(&self, w: &LossWeights, motion: bool) -> f64 {
        let m = if motion { w.motion * (self.ce + w.smooth * self.smooth) } else { 0.0 };
        w.waypoints * self.wp + m
    }

    pub fn add_scaled(&mut self, o: &LossParts, s: f64) {
        self.total += s * o.total;
        self.wp += s * o.wp;
        self.wp_mse += s * o.wp_mse;
        self.wp_token_ce += s * o.wp_token_ce;
        self.ce += s * o.ce;
        self.smooth += s * o.smooth;
    }
}

fn val<T: Element>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).item().to_f64().unwrap_or(f64::NAN)
}

/// Soft-argmax expectation of each payload row in physical units,
/// `payload x 1`.
pub fn soft_argmax_values<T: Element>(
    g: &mut Graph<T>,
    logits: Var,
    codec: &SequenceCodec,
    payload: usize,
) -> Result<Var, PlannerError> {
    let n_u = codec.n_u as usize;
    let rows = g.select_rows(logits, &(0..payload).collect::<Vec<_>>())?;
    let values = g.slice_cols(rows, 0, n_u)?;
    let probs = g.softmax(values, 1)?;
    let centers = (0..n_u).map(|t| T::lit(-1.0 + (t as f64 + 0.5) * 2.0 / n_u as f64)).collect();
    let centers = g.constant(Tensor::matrix(n_u, 1, centers)?)?;
    let unit = g.matmul(probs, centers)?;
    let ranges = (0..payload).map(|i| T::lit(codec.axis_range(i))).collect();
    let ranges = g.constant(Tensor::matrix(payload, 1, ranges)?)?;
    Ok(g.mul(unit, ranges)?)
}

/// Waypoint loss from teacher-forced trajectory logits.
///
/// `targets` are the tokens each logits row should predict (the sequence
/// shifted by one); PAD targets are ignored. The MSE compares soft-argmax
/// expectations with the continuous waypoints, with heading errors wrapped.
pub fn waypoint_loss<T: Element>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &[u32],
    waypoints: &[Pose2D],
    codec: &SequenceCodec,
    objective: WaypointObjective,
) -> Result<(Var, f64, f64), PlannerError> {
    let k = codec.tokens_per_step();
    let payload = k * waypoints.len();
    if targets.len() != payload + 1 || g.shape(logits)[0] != targets.len() {
        return Err(PlannerError::Input(format!(
            "{} logits rows and {} targets for {} waypoints",
            g.shape(logits)[0],
            targets.len(),
            waypoints.len()
        )));
    }
    let mut terms = Vec::new();
    let (mut mse_v, mut ce_v) = (0.0, 0.0);
    if objective != WaypointObjective::TokenCe {
        let pred = soft_argmax_values(g, logits, codec, payload)?;
        let current = g.value(pred).data.clone();
        let target: Vec<T> = (0..payload)
            .map(|i| {
                let wp = &waypoints[i / k];
                let gt = match i % k {
                    0 => wp.x,
                    1 => wp.y,
                    _ => {
                        // shifts the target so the residual is the wrapped angle
                        let p = current[i].to_f64().unwrap_or(0.0);
                        p + wrap_angle(wp.theta - p)
                    }
                };
                T::lit(gt)
            })
            .collect();
        let mse = g.mse(pred, &Tensor::matrix(payload, 1, target)?)?;
        mse_v = val(g, mse);
        terms.push(mse);
    }
    if objective != WaypointObjective::Mse {
        let pad = codec.traj_pad();
        let labels: Vec<Option<usize>> = targets.iter().map(|&t| (t != pad).then_some(t as usize)).collect();
        let ce = g.cross_entropy(logits, &labels)?;
        ce_v = val(g, ce);
        terms.push(ce);
    }
    let loss = match terms[..] {
        [a] => a,
        [a, b] => g.add(a, b)?,
        _ => unreachable!("at least one waypoint term"),
    };
    Ok((loss, mse_v, ce_v))
}

/// Which of the `q - 1` forward-probability differences enter the
/// smoothness mean. Difference `t` (between steps `t - 1` and `t`) is
/// excluded when `|t - s| <= w` for some GT shift step `s`.
pub fn smoothness_keep(q: usize, shifts: &[usize], w: usize) -> Vec<bool> {
    (1..q)
        .map(|t| shifts.iter().all(|&s| t.abs_diff(s) > w))
        .collect()
}

/// `L_CE + λ_smooth L_smooth` over `Q x 2` motion logits. Returns the
/// combined term and the CE and smoothness values.
pub fn motion_loss<T: Element>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[usize],
    shifts: &[usize],
    weights: &LossWeights,
) -> Result<(Var, f64, f64), PlannerError> {
    let q = labels.len();
    if g.shape(logits) != [q, 2] {
        return Err(PlannerError::Input(format!(
            "motion logits {:?} for {q} labels",
            g.shape(logits)
        )));
    }
    let ce = g.cross_entropy(logits, &labels.iter().map(|&l| Some(l)).collect::<Vec<_>>())?;
    let ce_v = val(g, ce);
    if q < 2 {
        return Ok((ce, ce_v, 0.0));
    }
    let smooth = smoothness_term(g, logits, shifts, weights.smooth_window)?;
    let smooth_v = val(g, smooth);
    let scaled = g.scale(smooth, T::lit(weights.smooth));
    Ok((g.add(ce, scaled)?, ce_v, smooth_v))
}

/// Masked mean of `|p_t - p_{t-1}|` over forward probabilities.
pub fn smoothness_term<T: Element>(g: &mut Graph<T>, logits: Var, shifts: &[usize], w: usize) -> Result<Var, PlannerError> {
    let q = g.shape(logits)[0];
    let probs = g.softmax(logits, 1)?;
    let fwd = g.slice_cols(probs, 0, 1)?;
    let later = g.select_rows(fwd, &(1..q).collect::<Vec<_>>())?;
    let earlier = g.select_rows(fwd, &(0..q - 1).collect::<Vec<_>>())?;
    let diff = g.sub(later, earlier)?;
    Ok(g.masked_l1(diff, &smoothness_keep(q, shifts, w))?)
}

/// Finite-difference cases for the composite objectives on a small vocabulary.
pub fn gradcheck_cases() -> Vec<GradcheckCase> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let small = |with_heading| SequenceCodec {
        n_u: 8,
        n_v: 4,
        r_x: 10.0,
        r_y: 10.0,
        r_theta: std::f64::consts::PI,
        with_heading,
    };
    let wps = vec![Pose2D::new(1.3, -2.2, 3.0), Pose2D::new(-4.1, 0.6, -0.7)];
    let mut cases = Vec::new();
    for (name, codec, objective) in [
        ("waypoint_loss", small(true), WaypointObjective::Both),
        ("waypoint_loss_headingless_mse", small(false), WaypointObjective::Mse),
        ("waypoint_loss_token_ce", small(true), WaypointObjective::TokenCe),
    ] {
        let seq = codec.serialize_waypoints(&wps, codec.traj_len(wps.len()));
        let targets = seq.tokens[1..].to_vec();
        let logits = uniform(&[targets.len(), codec.traj_vocab()], 2.0, &mut rng);
        let wps = wps.clone();
        cases.push(GradcheckCase::new(name, vec![logits], move |g, v| {
            waypoint_loss(g, v[0], &targets, &wps, &codec, objective)
                .map(|r| r.0)
                .map_err(|e| AutodiffError::Invalid {
                    op: "waypoint_loss",
                    msg: e.to_string(),
                })
        }));
    }
    let labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
    let weights = LossWeights::default();
    cases.push(GradcheckCase::new(
        "motion_loss",
        vec![uniform(&[8, 2], 2.0, &mut rng)],
        move |g, v| {
            motion_loss(g, v[0], &labels, &[4], &weights)
                .map(|r| r.0)
                .map_err(|e| AutodiffError::Invalid {
                    op: "motion_loss",
                    msg: e.to_string(),
                })
        },
    ));
    cases
}

#[cfg(test)]
mod tests {
    use super::*;
    use parkbench_autodiff::ParameterStore;

    #[test]
    fn composite_losses_pass_gradcheck() {
        for case in gradcheck_cases() {
            let r = case.run(false).unwrap();
            assert!(r.passed, "{}: {}", r.name, r.rel_error);
            assert!(!case.run(true).unwrap().passed, "{}", r.name);
        }
    }

    #[test]
    fn keep_mask_window() {
        let keep = smoothness_keep(10, &[5], 2);
        let excluded: Vec<usize> = (1..10).filter(|t| !keep[t - 1]).collect();
        assert_eq!(excluded, vec![3, 4, 5, 6, 7]);
        assert!(smoothness_keep(10, &[], 2).iter().all(|&k| k));
    }

    /// Logits whose forward probability steps from 0.2 to 0.9 at `jump`.
    fn step_logits(q: usize, jump: usize) -> Tensor<f64> {
        let mut d = Vec::new();
        for t in 0..q {
            let p: f64 = if t < jump { 0.2 } else { 0.9 };
            d.extend([(p / (1.0 - p)).ln(), 0.0]);
        }
        Tensor::matrix(q, 2, d).unwrap()
    }

    #[test]
    fn jumps_inside_the_window_are_free() {
        let s = ParameterStore::new();
        for jump in 1..10 {
            let mut g = Graph::new(&s);
            let l = g.input(step_logits(10, jump)).unwrap();
            let v = smoothness_term(&mut g, l, &[5], 2).unwrap();
            let value = g.value(v).item();
            if (3..=7).contains(&jump) {
                assert_eq!(value, 0.0, "jump at {jump}");
                let grads = g.backward(v).unwrap();
                assert!(grads.of(l).is_none_or(|t| t.data.iter().all(|&x| x == 0.0)));
            } else {
                assert!(value > 0.0, "jump at {jump}");
            }
        }
    }

    #[test]
    fn constant_probabilities_have_no_smoothness_cost() {
        let s = ParameterStore::new();
        let mut g = Graph::new(&s);
        let l = g.input(Tensor::full(&[6, 2], 0.3)).unwrap();
        let v = smoothness_term(&mut g, l, &[], 2).unwrap();
        assert_eq!(g.value(v).item(), 0.0);
    }

    #[test]
    fn one_hot_logits_hit_the_quantization_floor() {
        let codec = SequenceCodec::default();
        let wps: Vec<Pose2D> = (0..4)
            .map(|i| Pose2D::new(0.37 * i as f64 - 1.0, 2.0 - 0.51 * i as f64, 0.4 * i as f64 - 3.0))
            .collect();
        let seq = codec.serialize_waypoints(&wps, codec.traj_len(wps.len()));
        let targets = &seq.tokens[1..];
        let vocab = codec.traj_vocab();
        let mut logits = vec![0.0; targets.len() * vocab];
        for (r, &t) in targets.iter().enumerate() {
            logits[r * vocab + t as usize] = 60.0;
        }
        let s = ParameterStore::new();
        let mut g = Graph::new(&s);
        let l = g.input(Tensor::matrix(targets.len(), vocab, logits).unwrap()).unwrap();
        let (_, mse, ce) = waypoint_loss(&mut g, l, targets, &wps, &codec, WaypointObjective::Both).unwrap();
        let floor = (10.0f64 / 1200.0).powi(2);
        assert!(mse <= floor, "{mse} > {floor}");
        assert!(ce < 1e-20);
    }

    #[test]
    fn origin_prediction_of_origin_is_free() {
        let codec = SequenceCodec {
            n_u: 1201,
            ..SequenceCodec::default()
        };
        // with an odd vocabulary the middle bin is centred on zero
        let wps = vec![Pose2D::origin(); 3];
        let seq = codec.serialize_waypoints(&wps, codec.traj_len(3));
        let vocab = codec.traj_vocab();
        let targets = &seq.tokens[1..];
        let mut logits = vec![0.0; targets.len() * vocab];
        for r in 0..targets.len() {
            logits[r * vocab + 600] = 80.0;
        }
        let s = ParameterStore::new();
        let mut g = Graph::new(&s);
        let l = g.input(Tensor::matrix(targets.len(), vocab, logits).unwrap()).unwrap();
        let (_, mse, _) = waypoint_loss(&mut g, l, targets, &wps, &codec, WaypointObjective::Mse).unwrap();
        assert!(mse < 1e-24, "{mse}");
    }

    #[test]
    fn heading_residual_is_wrapped() {
        let codec = SequenceCodec::default();
        let wps = vec![Pose2D::new(0.0, 0.0, 3.1)];
        let seq = codec.serialize_waypoints(&wps, codec.traj_len(1));
        let vocab = codec.traj_vocab();
        let targets = &seq.tokens[1..];
        let mut logits = vec![0.0; targets.len() * vocab];
        for (r, &t) in targets.iter().enumerate() {
            logits[r * vocab + t as usize] = 80.0;
        }
        // the heading row predicts -3.1, which is 0.083 rad away after wrapping
        logits[2 * vocab + targets[2] as usize] = 0.0;
        let flipped = parkbench_core::encoding::serialize_value(-3.1, codec.r_theta, codec.n_u);
        logits[2 * vocab + flipped as usize] = 80.0;
        let s = ParameterStore::new();
        let mut g = Graph::new(&s);
        let l = g.input(Tensor::matrix(targets.len(), vocab, logits).unwrap()).unwrap();
        let (_, mse, _) = waypoint_loss(&mut g, l, targets, &wps, &codec, WaypointObjective::Mse).unwrap();
        assert!(mse < 0.01, "{mse}");
    }
}
