//! Trajectory and gear-shift metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{classify_kshot, shift_steps, KShot};
use crate::error::MetricsError;
use crate::geometry::{wrap_angle, Pose2D};
use crate::trajectory::Direction;

fn same_len(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Mean pointwise planar distance.
pub fn l2_error(pred: &[Pose2D], gt: &[Pose2D]) -> Result<f64, MetricsError> {
    same_len(pred.len(), gt.len())?;
    Ok(pred.iter().zip(gt).map(|(p, g)| p.distance(g)).sum::<f64>() / pred.len() as f64)
}

fn directed(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| (p.0 - q.0).hypot(p.1 - q.1))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between two planar point sets.
pub fn hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(directed(a, b).max(directed(b, a)))
}

pub fn points(poses: &[Pose2D]) -> Vec<(f64, f64)> {
    poses.iter().map(|p| (p.x, p.y)).collect()
}

/// Unnormalized DFT of `x + iy`.
pub fn dft(z: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let n = z.len();
    (0..n)
        .map(|k| {
            z.iter().enumerate().fold((0.0, 0.0), |acc, (t, &(re, im))| {
                let ang = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                let (s, c) = ang.sin_cos();
                (acc.0 + re * c - im * s, acc.1 + re * s + im * c)
            })
        })
        .collect()
}

/// L2 norm of the difference of the waypoint sequences' DFT coefficients.
pub fn fourier_descriptor_diff(pred: &[Pose2D], gt: &[Pose2D]) -> Result<f64, MetricsError> {
    same_len(pred.len(), gt.len())?;
    let a = dft(&points(pred));
    let b = dft(&points(gt));
    Ok(a.iter()
        .zip(&b)
        .map(|(p, q)| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Average heading error in degrees.
pub fn ahe(pred: &[f64], gt: &[f64]) -> Result<f64, MetricsError> {
    same_len(pred.len(), gt.len())?;
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| wrap_angle(p - g).abs()).sum();
    Ok((sum / pred.len() as f64).to_degrees())
}

/// Class with the larger probability; equal probabilities read as forward.
pub fn argmax_direction(p: [f64; 2]) -> Direction {
    if p[0] >= p[1] {
        Direction::Forward
    } else {
        Direction::Backward
    }
}

/// Fraction of steps whose dominant predicted class matches the label.
pub fn motion_accuracy(probs: &[[f64; 2]], gt: &[Direction]) -> Result<f64, MetricsError> {
    same_len(probs.len(), gt.len())?;
    let hits = probs
        .iter()
        .zip(gt)
        .filter(|(p, g)| argmax_direction(**p) == **g)
        .count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Per-GT-ordinal errors: the n-th predicted shift is matched to the n-th GT
/// shift; `None` marks a GT shift with no predicted counterpart.
pub fn shift_point_errors(
    pred_wp: &[Pose2D],
    pred_dirs: &[Direction],
    gt_wp: &[Pose2D],
    gt_dirs: &[Direction],
) -> Result<Vec<Option<f64>>, MetricsError> {
    same_len(pred_wp.len(), pred_dirs.len())?;
    same_len(gt_wp.len(), gt_dirs.len())?;
    let ps = shift_steps(pred_dirs);
    let gs = shift_steps(gt_dirs);
    Ok(gs
        .iter()
        .enumerate()
        .map(|(n, &g)| ps.get(n).map(|&p| pred_wp[p].distance(&gt_wp[g])))
        .collect())
}

/// Model output for one sample. Variants without a heading stream or a
/// motion branch leave the corresponding metrics undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub waypoints: Vec<Pose2D>,
    pub has_heading: bool,
    /// `[forward, backward]` probabilities per step.
    pub motion_probs: Option<Vec<[f64; 2]>>,
}

impl Prediction {
    pub fn directions(&self) -> Option<Vec<Direction>> {
        self.motion_probs
            .as_ref()
            .map(|m| m.iter().map(|&p| argmax_direction(p)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub waypoints: Vec<Pose2D>,
    pub directions: Vec<Direction>,
}

/// Metrics of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub l2: f64,
    pub fourier_diff: f64,
    pub hausdorff: f64,
    pub ahe: Option<f64>,
    pub motion_hits: Option<usize>,
    pub steps: usize,
    pub kshot: KShot,
    /// One entry per GT shift; all `None` without a motion branch.
    pub shift_errors: Vec<Option<f64>>,
}

pub fn evaluate_sample(pred: &Prediction, gt: &GroundTruth) -> Result<SampleMetrics, MetricsError> {
    same_len(pred.waypoints.len(), gt.waypoints.len())?;
    same_len(pred.waypoints.len(), gt.directions.len())?;
    let headings = |p: &[Pose2D]| p.iter().map(|q| q.theta).collect::<Vec<_>>();
    let gt_shifts = shift_steps(&gt.directions).len();
    let (motion_hits, shift_errors) = match pred.directions() {
        Some(dirs) => {
            same_len(dirs.len(), gt.directions.len())?;
            (
                Some(dirs.iter().zip(&gt.directions).filter(|(a, b)| a == b).count()),
                shift_point_errors(&pred.waypoints, &dirs, &gt.waypoints, &gt.directions)?,
            )
        }
        None => (None, vec![None; gt_shifts]),
    };
    Ok(SampleMetrics {
        l2: l2_error(&pred.waypoints, &gt.waypoints)?,
        fourier_diff: fourier_descriptor_diff(&pred.waypoints, &gt.waypoints)?,
        hausdorff: hausdorff(&points(&pred.waypoints), &points(&gt.waypoints))?,
        ahe: if pred.has_heading {
            Some(ahe(&headings(&pred.waypoints), &headings(&gt.waypoints))?)
        } else {
            None
        },
        motion_hits,
        steps: gt.directions.len(),
        kshot: classify_kshot(gt_shifts).unwrap_or(KShot::Four),
        shift_errors,
    })
}

/// Shift errors of one k-shot category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShifts {
    pub samples: usize,
    /// Mean error per ordinal over matched pairs; `None` when nothing matched.
    pub ordinal_means: Vec<Option<f64>>,
    pub matched: Vec<usize>,
    pub expected: Vec<usize>,
    /// Mean of the available ordinal means.
    pub m_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub l2_mean: f64,
    pub fourier_diff: f64,
    pub hausdorff: f64,
    pub ahe: Option<f64>,
    pub motion_acc: Option<f64>,
    pub shift_errors: BTreeMap<KShot, CategoryShifts>,
    /// Mean over every matched shift pair of every category.
    pub shift_avg: Option<f64>,
}

pub fn aggregate(rows: &[SampleMetrics]) -> Result<MetricsReport, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&SampleMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    // optional metrics are reported only when every sample defines them
    let ahe: Option<Vec<f64>> = rows.iter().map(|r| r.ahe).collect();
    let hits: Option<Vec<usize>> = rows.iter().map(|r| r.motion_hits).collect();
    let steps: usize = rows.iter().map(|r| r.steps).sum();

    let mut shift_errors = BTreeMap::new();
    for k in KShot::ALL {
        let group: Vec<&SampleMetrics> = rows.iter().filter(|r| r.kshot == k).collect();
        if group.is_empty() {
            continue;
        }
        let ordinals = k.shots() - 1;
        let mut sums = vec![0.0; ordinals];
        let mut matched = vec![0; ordinals];
        for r in &group {
            for (i, e) in r.shift_errors.iter().enumerate().take(ordinals) {
                if let Some(e) = e {
                    sums[i] += e;
                    matched[i] += 1;
                }
            }
        }
        let ordinal_means: Vec<Option<f64>> = sums
            .iter()
            .zip(&matched)
            .map(|(&s, &m)| (m > 0).then(|| s / m as f64))
            .collect();
        let present: Vec<f64> = ordinal_means.iter().flatten().copied().collect();
        shift_errors.insert(
            k,
            CategoryShifts {
                samples: group.len(),
                m_avg: (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64),
                ordinal_means,
                matched,
                expected: vec![group.len(); ordinals],
            },
        );
    }
    let pooled: Vec<f64> = rows.iter().flat_map(|r| r.shift_errors.iter().flatten().copied()).collect();
    Ok(MetricsReport {
        samples: rows.len(),
        l2_mean: mean(|r| r.l2),
        fourier_diff: mean(|r| r.fourier_diff),
        hausdorff: mean(|r| r.hausdorff),
        ahe: ahe.map(|v| v.iter().sum::<f64>() / n),
        motion_acc: hits.map(|h| h.iter().sum::<usize>() as f64 / steps.max(1) as f64),
        shift_avg: (!pooled.is_empty()).then(|| pooled.iter().sum::<f64>() / pooled.len() as f64),
        shift_errors,
    })
}

pub fn evaluate(preds: &[Prediction], gts: &[GroundTruth]) -> Result<MetricsReport, MetricsError> {
    same_len(preds.len(), gts.len())?;
    let rows = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| evaluate_sample(p, g))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate(&rows)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "/".to_string(), |x| format!("{x:.3}"))
}

/// Aligned-column table: waypoint errors, then per-category shift errors
/// with one entry per ordinal (`/` for ordinals never predicted).
pub fn render_table(report: &MetricsReport, label: &str) -> String {
    let cat = |k: KShot| -> String {
        let ordinals = k.shots() - 1;
        match report.shift_errors.get(&k) {
            None => vec!["/"; ordinals].join(" - "),
            Some(c) => c.ordinal_means.iter().map(|&m| cell(m)).collect::<Vec<_>>().join(" - "),
        }
    };
    let header = [
        "Method", "L2 Dis.", "Four. Diff.", "Haus. Dis.", "AHE", "Acc.", "2S[P1]", "3S[P1-P2]", "4S[P1-P2-P3]", "Avg.",
    ];
    let row = [
        label.to_string(),
        format!("{:.3}", report.l2_mean),
        format!("{:.3}", report.fourier_diff),
        format!("{:.3}", report.hausdorff),
        cell(report.ahe),
        cell(report.motion_acc),
        cat(KShot::Two),
        cat(KShot::Three),
        cat(KShot::Four),
        cell(report.shift_avg),
    ];
    let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
    let mut out = String::new();
    for line in [header.iter().map(|s| s.to_string()).collect::<Vec<_>>(), row.to_vec()] {
        let cells: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        writeln!(out, "| {} |", cells.join(" | ")).expect("string write");
    }
    out
}
