//! Dataset preparation: motion labeling, valid slices, k-shot filtering,
//! future-window samples, BEV rasterization, splits and JSONL persistence.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DatasetError;
use crate::geometry::{OrientedBox, Pose2D};
use crate::trajectory::{Direction, Frame, MotionState, Trajectory, STATIONARY_SPEED};

/// Labels frames by the speed dead band, then merges single stationary
/// frames sandwiched inside a same-direction run.
pub fn label_motion_states(speeds: &[f64]) -> Vec<MotionState> {
    let raw: Vec<MotionState> = speeds.iter().map(|&v| MotionState::from_speed(v)).collect();
    let mut out = raw.clone();
    for i in 1..raw.len().saturating_sub(1) {
        if raw[i] == MotionState::Stationary
            && raw[i - 1] != MotionState::Stationary
            && raw[i - 1] == raw[i + 1]
        {
            out[i] = raw[i - 1];
        }
    }
    out
}

/// Relabels every frame of `traj` from its speeds.
pub fn relabel(traj: &mut Trajectory) {
    let labels = label_motion_states(&traj.speeds());
    for (f, l) in traj.frames.iter_mut().zip(labels) {
        f.motion_state = l;
    }
}

/// Number of forward/reverse alternations; stationary gaps are skipped.
pub fn count_gear_shifts(states: &[MotionState]) -> usize {
    let mut last: Option<Direction> = None;
    let mut n = 0;
    for d in states.iter().filter_map(|s| s.direction()) {
        if last.is_some_and(|l| l != d) {
            n += 1;
        }
        last = Some(d);
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KShot {
    #[serde(rename = "1-shot")]
    One,
    #[serde(rename = "2-shot")]
    Two,
    #[serde(rename = "3-shot")]
    Three,
    #[serde(rename = "4-shot")]
    Four,
}

impl KShot {
    pub const ALL: [KShot; 4] = [KShot::One, KShot::Two, KShot::Three, KShot::Four];

    pub fn shots(self) -> usize {
        match self {
            KShot::One => 1,
            KShot::Two => 2,
            KShot::Three => 3,
            KShot::Four => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            KShot::One => "1-shot",
            KShot::Two => "2-shot",
            KShot::Three => "3-shot",
            KShot::Four => "4-shot",
        }
    }
}

/// Maps a shift count to its category; `None` for more than three shifts.
pub fn classify_kshot(shifts: usize) -> Option<KShot> {
    match shifts {
        0 => Some(KShot::One),
        1 => Some(KShot::Two),
        2 => Some(KShot::Three),
        3 => Some(KShot::Four),
        _ => None,
    }
}

pub fn trajectory_kshot(traj: &Trajectory) -> Option<KShot> {
    classify_kshot(count_gear_shifts(&traj.states()))
}

fn is_moving(f: &Frame) -> bool {
    f.speed.abs() > STATIONARY_SPEED
}

/// Trims idle frames before the first throttled motion and everything after
/// the vehicle comes to rest for the last time.
pub fn extract_valid_slice(traj: &Trajectory) -> Result<Trajectory, DatasetError> {
    let start = traj
        .frames
        .iter()
        .position(|f| f.throttle > 0.0 && is_moving(f))
        .ok_or(DatasetError::EmptySlice)?;
    let last_moving = traj.frames.iter().rposition(is_moving).expect("start is moving");
    let end = (last_moving + 1).min(traj.frames.len() - 1);
    Ok(Trajectory {
        frames: traj.frames[start..=end].to_vec(),
        dt: traj.dt,
        scenario_ref: traj.scenario_ref.clone(),
        target_slot: traj.target_slot,
    })
}

/// Mean |v| over moving frames, in km/h.
pub fn moving_average_speed_kmh(traj: &Trajectory) -> f64 {
    let moving: Vec<f64> = traj
        .frames
        .iter()
        .filter(|f| is_moving(f))
        .map(|f| f.speed.abs())
        .collect();
    if moving.is_empty() {
        return 0.0;
    }
    moving.iter().sum::<f64>() / moving.len() as f64 * 3.6
}

/// Inclusive bounds of one k-shot category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryBounds {
    pub speed_kmh: (f64, f64),
    pub frames: (usize, usize),
    pub length_m: (f64, f64),
}

impl CategoryBounds {
    pub fn admits(&self, traj: &Trajectory) -> bool {
        let v = moving_average_speed_kmh(traj);
        let n = traj.len();
        let l = traj.path_length();
        (self.speed_kmh.0..=self.speed_kmh.1).contains(&v)
            && (self.frames.0..=self.frames.1).contains(&n)
            && (self.length_m.0..=self.length_m.1).contains(&l)
    }
}

/// Per-category bounds; `None` leaves a category unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTable {
    pub one_shot: Option<CategoryBounds>,
    pub two_shot: Option<CategoryBounds>,
    pub three_shot: Option<CategoryBounds>,
    pub four_shot: Option<CategoryBounds>,
}

impl Default for FilterTable {
    fn default() -> Self {
        Self {
            one_shot: None,
            two_shot: Some(CategoryBounds {
                speed_kmh: (2.90, 6.70),
                frames: (101, 210),
                length_m: (12.8, 25.2),
            }),
            three_shot: Some(CategoryBounds {
                speed_kmh: (2.79, 5.70),
                frames: (125, 219),
                length_m: (14.0, 22.5),
            }),
            four_shot: Some(CategoryBounds {
                speed_kmh: (2.83, 6.00),
                frames: (144, 280),
                length_m: (17.0, 31.0),
            }),
        }
    }
}

impl FilterTable {
    pub fn bounds(&self, k: KShot) -> Option<&CategoryBounds> {
        match k {
            KShot::One => self.one_shot.as_ref(),
            KShot::Two => self.two_shot.as_ref(),
            KShot::Three => self.three_shot.as_ref(),
            KShot::Four => self.four_shot.as_ref(),
        }
    }

    /// Out-of-taxonomy trajectories are always rejected.
    pub fn keeps(&self, traj: &Trajectory) -> bool {
        match trajectory_kshot(traj) {
            None => false,
            Some(k) => self.bounds(k).is_none_or(|b| b.admits(traj)),
        }
    }
}

pub fn filter_core_dataset(trajs: Vec<Trajectory>, table: &FilterTable) -> Vec<Trajectory> {
    trajs.into_iter().filter(|t| table.keeps(t)).collect()
}

/// Square occupancy grid centred on the ego vehicle. Row index runs along
/// the ego x axis (forward), column index along the ego y axis (left).
#[derive(Debug, Clone, PartialEq)]
pub struct BevOccupancy {
    pub size: usize,
    pub resolution: f64,
    pub extent: f64,
    pub cells: Vec<u8>,
}

impl BevOccupancy {
    pub fn empty(extent: f64, resolution: f64) -> Self {
        let size = (2.0 * extent / resolution).round() as usize;
        Self {
            size,
            resolution,
            extent,
            cells: vec![0; size * size],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.size + col]
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    /// Ego-frame coordinate of a cell centre.
    pub fn cell_center(&self, i: usize) -> f64 {
        -self.extent + (i as f64 + 0.5) * self.resolution
    }
}

/// Marks cells whose centre lies inside a static-vehicle footprint.
pub fn rasterize_bev(obstacles: &[OrientedBox], ego: &Pose2D, extent: f64, resolution: f64) -> BevOccupancy {
    let mut bev = BevOccupancy::empty(extent, resolution);
    let n = bev.size;
    let index_range = |lo: f64, hi: f64| -> Option<(usize, usize)> {
        let a = ((lo + extent) / resolution - 0.5).ceil().max(0.0);
        let b = ((hi + extent) / resolution - 0.5).floor().min(n as f64 - 1.0);
        (a <= b).then_some((a as usize, b as usize))
    };
    for ob in obstacles {
        let local = OrientedBox {
            center: ob.center.in_frame(ego),
            ..*ob
        };
        let (x0, y0, x1, y1) = local.aabb();
        let (Some((r0, r1)), Some((c0, c1))) = (index_range(x0, x1), index_range(y0, y1)) else {
            continue;
        };
        for r in r0..=r1 {
            let x = bev.cell_center(r);
            for c in c0..=c1 {
                if local.contains_point(x, bev.cell_center(c)) {
                    bev.cells[r * n + c] = 1;
                }
            }
        }
    }
    bev
}

/// One supervised example: the state at frame `frame_index` and the next `Q`
/// frames, all in the ego frame at that instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub scenario_id: String,
    pub frame_index: usize,
    pub ego: Pose2D,
    pub target: Pose2D,
    pub future_waypoints: Vec<Pose2D>,
    pub future_motion: Vec<MotionState>,
    /// Window steps whose filled direction differs from the previous step.
    pub shift_steps: Vec<usize>,
    /// Direction used when a window holds no directional frame.
    pub fallback: Direction,
}

impl TrainingSample {
    pub fn horizon(&self) -> usize {
        self.future_waypoints.len()
    }

    pub fn kshot(&self) -> KShot {
        classify_kshot(self.shift_steps.len()).unwrap_or(KShot::Four)
    }

    /// Motion labels with stationary steps replaced by a direction.
    pub fn filled_directions(&self) -> Vec<Direction> {
        fill_directions(&self.future_motion, self.fallback)
    }
}

/// Replaces each stationary label with the nearest following direction, else
/// the previous direction, else `fallback`.
pub fn fill_directions(labels: &[MotionState], fallback: Direction) -> Vec<Direction> {
    let mut out = vec![fallback; labels.len()];
    let mut next: Option<Direction> = None;
    for i in (0..labels.len()).rev() {
        if let Some(d) = labels[i].direction() {
            next = Some(d);
        }
        if let Some(d) = next {
            out[i] = d;
        }
    }
    // trailing stationary steps take the last directional label
    if let Some(last) = labels.iter().rposition(|l| l.direction().is_some()) {
        let d = labels[last].direction().expect("directional");
        for o in out.iter_mut().skip(last + 1) {
            *o = d;
        }
    }
    out
}

/// Steps `i >= 1` where the filled direction changes.
pub fn shift_steps(filled: &[Direction]) -> Vec<usize> {
    (1..filled.len()).filter(|&i| filled[i] != filled[i - 1]).collect()
}

/// Direction of the last directional frame, used for all-stationary windows.
pub fn final_approach_direction(traj: &Trajectory) -> Direction {
    traj.frames
        .iter()
        .rev()
        .find_map(|f| f.motion_state.direction())
        .unwrap_or(Direction::Forward)
}

/// Builds one sample per `stride`-th frame; future step `b` reads frame
/// `min(j + b, N - 1)`.
pub fn build_training_samples(
    traj: &Trajectory,
    horizon: usize,
    stride: usize,
) -> Result<Vec<TrainingSample>, DatasetError> {
    if horizon == 0 {
        return Err(DatasetError::BadHorizon);
    }
    if traj.is_empty() {
        return Err(DatasetError::EmptySlice);
    }
    let n = traj.len();
    let fallback = final_approach_direction(traj);
    let mut out = Vec::new();
    for j in (0..n).step_by(stride.max(1)) {
        let ego = traj.frames[j].pose;
        let window: Vec<&Frame> = (1..=horizon).map(|b| &traj.frames[(j + b).min(n - 1)]).collect();
        let future_motion: Vec<MotionState> = window.iter().map(|f| f.motion_state).collect();
        let filled = fill_directions(&future_motion, fallback);
        out.push(TrainingSample {
            scenario_id: traj.scenario_ref.clone(),
            frame_index: j,
            ego,
            target: traj.target_slot.in_frame(&ego),
            future_waypoints: window.iter().map(|f| f.pose.in_frame(&ego)).collect(),
            shift_steps: shift_steps(&filled),
            future_motion,
            fallback,
        });
    }
    Ok(out)
}

/// Seeded split by scenario identifier.
pub fn split_dataset<T, F>(items: Vec<T>, ratio: f64, seed: u64, key: F) -> Result<(Vec<T>, Vec<T>), DatasetError>
where
    F: Fn(&T) -> &str,
{
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::BadRatio(ratio));
    }
    let ids: BTreeSet<String> = items.iter().map(|t| key(t).to_string()).collect();
    if ids.len() < 2 {
        return Err(DatasetError::TooFewScenarios(ids.len()));
    }
    let mut ids: Vec<String> = ids.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ids.len() as f64 * ratio).round() as usize).clamp(1, ids.len() - 1);
    let train_ids: BTreeSet<&str> = ids[..n_train].iter().map(String::as_str).collect();
    let (train, val) = items.into_iter().partition(|t| train_ids.contains(key(t)));
    Ok((train, val))
}

/// Line record of the dataset file. Field order is fixed:
/// `scenario_id, seed, target_slot [x, y, theta], frames [[x, y, theta, v, throttle, state]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub scenario_id: String,
    pub seed: u64,
    pub target_slot: [f64; 3],
    pub frames: Vec<(f64, f64, f64, f64, f64, MotionState)>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(traj: &Trajectory, seed: u64) -> Self {
        let t = traj.target_slot;
        Self {
            scenario_id: traj.scenario_ref.clone(),
            seed,
            target_slot: [t.x, t.y, t.theta],
            frames: traj
                .frames
                .iter()
                .map(|f| (f.pose.x, f.pose.y, f.pose.theta, f.speed, f.throttle, f.motion_state))
                .collect(),
        }
    }

    pub fn to_trajectory(&self, dt: f64) -> Result<Trajectory, crate::GeometryError> {
        let [x, y, th] = self.target_slot;
        let frames = self
            .frames
            .iter()
            .map(|&(x, y, th, v, throttle, s)| {
                Ok(Frame {
                    pose: Pose2D::try_new(x, y, th)?,
                    speed: v,
                    throttle,
                    motion_state: s,
                })
            })
            .collect::<Result<Vec<_>, crate::GeometryError>>()?;
        Ok(Trajectory {
            frames,
            dt,
            scenario_ref: self.scenario_id.clone(),
            target_slot: Pose2D::try_new(x, y, th)?,
        })
    }
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[TrajectoryRecord]) -> Result<(), DatasetError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TrajectoryRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::MotionState::{Forward as F, Reverse as R, Stationary as S};
    use std::f64::consts::PI;

    fn traj_from(speeds: &[f64], throttles: &[f64]) -> Trajectory {
        let mut x = 0.0;
        let frames = speeds
            .iter()
            .zip(throttles)
            .map(|(&v, &t)| {
                x += v * 0.2;
                Frame {
                    pose: Pose2D::new(x, 0.0, 0.0),
                    speed: v,
                    throttle: t,
                    motion_state: MotionState::from_speed(v),
                }
            })
            .collect();
        Trajectory {
            frames,
            dt: 0.2,
            scenario_ref: "t".into(),
            target_slot: Pose2D::new(x, 0.0, 0.0),
        }
    }

    #[test]
    fn labeling_examples() {
        assert_eq!(label_motion_states(&[0.2, 0.2, -0.2]), vec![F, F, R]);
        assert_eq!(label_motion_states(&[0.0]), vec![S]);
        assert_eq!(label_motion_states(&[0.3, 0.04, 0.3]), vec![F, F, F]);
        // two-frame gaps and direction changes are real pauses
        assert_eq!(label_motion_states(&[0.3, 0.0, 0.0, 0.3]), vec![F, S, S, F]);
        assert_eq!(label_motion_states(&[0.3, 0.0, -0.3]), vec![F, S, R]);
    }

    #[test]
    fn shift_counting() {
        assert_eq!(count_gear_shifts(&[F, F, R, R]), 1);
        assert_eq!(count_gear_shifts(&[F, S, S, F]), 0);
        assert_eq!(count_gear_shifts(&[F, S, R, S, F]), 2);
        assert_eq!(classify_kshot(1), Some(KShot::Two));
        assert_eq!(classify_kshot(0), Some(KShot::One));
        assert_eq!(classify_kshot(3), Some(KShot::Four));
        assert_eq!(classify_kshot(4), None);
    }

    #[test]
    fn valid_slice_bounds() {
        let mut speeds = vec![0.0; 10];
        let mut thr = vec![0.0; 10];
        speeds.extend([0.3, 0.5, 0.5, 0.2, 0.0, 0.0, 0.0]);
        thr.extend([0.3, 0.3, 0.2, 0.0, 0.0, 0.0, 0.0]);
        let t = traj_from(&speeds, &thr);
        let s = extract_valid_slice(&t).unwrap();
        assert_eq!(s.frames, t.frames[10..=14].to_vec());
        assert_eq!(extract_valid_slice(&s).unwrap(), s);
        let idle = traj_from(&[0.0; 5], &[0.0; 5]);
        assert!(matches!(extract_valid_slice(&idle), Err(DatasetError::EmptySlice)));
        // motion without throttle (coasting) does not open the slice
        let coast = traj_from(&[0.2, 0.3, 0.3, 0.0], &[0.0, 0.5, 0.5, 0.0]);
        assert_eq!(extract_valid_slice(&coast).unwrap().frames, coast.frames[1..].to_vec());
    }

    fn with_stats(shifts: usize, frames: usize, kmh: f64, length: f64) -> Trajectory {
        // straight-line fixture; direction alternates `shifts` times
        let v = kmh / 3.6;
        let mut out = Vec::new();
        let step = length / (frames - 1) as f64;
        for i in 0..frames {
            let dir = if shifts == 0 { 1.0 } else if (i * (shifts + 1)) / frames % 2 == 0 { 1.0 } else { -1.0 };
            out.push(Frame {
                pose: Pose2D::new(i as f64 * step, 0.0, 0.0),
                speed: dir * v,
                throttle: 0.3,
                motion_state: MotionState::from_speed(dir * v),
            });
        }
        Trajectory {
            frames: out,
            dt: 0.2,
            scenario_ref: "f".into(),
            target_slot: Pose2D::origin(),
        }
    }

    #[test]
    fn filter_examples() {
        let table = FilterTable::default();
        let kept = with_stats(1, 150, 4.0, 18.0);
        assert_eq!(trajectory_kshot(&kept), Some(KShot::Two));
        assert!((kept.path_length() - 18.0).abs() < 1e-9);
        assert!(table.keeps(&kept));
        assert!(!table.keeps(&with_stats(1, 250, 4.0, 18.0)));
        assert!(table.keeps(&with_stats(0, 900, 0.3, 500.0)));
        assert!(!table.keeps(&with_stats(4, 200, 4.0, 20.0)));
        let all = vec![kept.clone(), with_stats(1, 250, 4.0, 18.0)];
        assert_eq!(filter_core_dataset(all, &table), vec![kept]);
    }

    fn window_fixture() -> Trajectory {
        let speeds: Vec<f64> = (0..50)
            .map(|i| match i {
                0 => 0.0,
                1..=19 => 0.8,
                20..=22 => 0.0,
                _ => -0.6,
            })
            .collect();
        let frames = speeds
            .iter()
            .enumerate()
            .map(|(i, &v)| Frame {
                pose: Pose2D::new(i as f64 * 0.1, (i as f64 * 0.05).sin(), i as f64 * 0.02),
                speed: v,
                throttle: 0.2,
                motion_state: MotionState::from_speed(v),
            })
            .collect();
        Trajectory {
            frames,
            dt: 0.2,
            scenario_ref: "w".into(),
            target_slot: Pose2D::new(3.0, 1.0, PI / 2.0),
        }
    }

    #[test]
    fn windows_clamp_at_the_end() {
        let t = window_fixture();
        let n = t.len();
        let samples = build_training_samples(&t, 30, 1).unwrap();
        assert_eq!(samples.len(), n);
        let last = &samples[n - 1];
        assert!(last
            .future_waypoints
            .iter()
            .all(|p| p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.theta.abs() < 1e-12));
        let near = &samples[n - 3];
        // steps b >= 3 all read the final frame
        for p in &near.future_waypoints[2..] {
            assert_eq!(*p, near.future_waypoints[2]);
        }
        assert_ne!(near.future_waypoints[0], near.future_waypoints[2]);
        assert!(build_training_samples(&t, 0, 1).is_err());
    }

    #[test]
    fn window_matches_reslice_oracle() {
        let t = window_fixture();
        let j = 10;
        let s = &build_training_samples(&t, 30, 1).unwrap()[j];
        let ego = t.frames[j].pose;
        let (c, sn) = (ego.theta.cos(), ego.theta.sin());
        for b in 1..=30 {
            let f = &t.frames[(j + b).min(t.len() - 1)];
            let dx = f.pose.x - ego.x;
            let dy = f.pose.y - ego.y;
            let p = s.future_waypoints[b - 1];
            assert_eq!(p.x, c * dx + sn * dy);
            assert_eq!(p.y, -sn * dx + c * dy);
            assert_eq!(s.future_motion[b - 1], f.motion_state);
        }
        // the stop at frame 20 is window index 9; the pause takes the following direction
        assert_eq!(s.shift_steps, vec![9]);
        assert_eq!(s.kshot(), KShot::Two);
        assert_eq!(s.target, t.target_slot.in_frame(&ego));
    }

    #[test]
    fn direction_fill() {
        use Direction::{Backward as B, Forward as Fw};
        assert_eq!(fill_directions(&[F, S, S, R, R], B), vec![Fw, B, B, B, B]);
        assert_eq!(fill_directions(&[S, S, F, S], B), vec![Fw, Fw, Fw, Fw]);
        assert_eq!(fill_directions(&[S, S], B), vec![B, B]);
        assert_eq!(shift_steps(&[Fw, B, B, Fw]), vec![1, 3]);
    }

    #[test]
    fn bev_empty_and_clipped() {
        let bev = rasterize_bev(&[], &Pose2D::origin(), 10.0, 0.1);
        assert_eq!(bev.size, 200);
        assert_eq!(bev.occupied(), 0);
        let far = OrientedBox::new(Pose2D::new(30.0, 0.0, 0.3), 2.35, 0.95).unwrap();
        assert_eq!(rasterize_bev(&[far], &Pose2D::origin(), 10.0, 0.1).occupied(), 0);
    }

    #[test]
    fn bev_area_oracle() {
        let b = OrientedBox::new(Pose2D::new(3.03, -2.51, 0.0), 2.0, 1.0).unwrap();
        let bev = rasterize_bev(&[b], &Pose2D::origin(), 10.0, 0.1);
        let expect = 8.0 / (0.1 * 0.1);
        assert!(((bev.occupied() as f64) - expect).abs() <= 0.05 * expect);
        // forward row, left column orientation
        let r = ((3.03 + 10.0) / 0.1) as usize;
        let c = ((-2.51 + 10.0) / 0.1) as usize;
        assert_eq!(bev.get(r, c), 1);
        assert_eq!(bev.get(c, r), 0);
    }

    #[test]
    fn split_examples() {
        let items: Vec<(String, usize)> = (0..10).flat_map(|s| (0..3).map(move |k| (format!("s{s}"), k))).collect();
        let (tr, va) = split_dataset(items.clone(), 0.8, 3, |t| &t.0).unwrap();
        let ids = |v: &[(String, usize)]| v.iter().map(|t| t.0.clone()).collect::<BTreeSet<_>>();
        assert_eq!(ids(&tr).len(), 8);
        assert_eq!(ids(&va).len(), 2);
        assert_eq!(tr.len() + va.len(), 30);
        let (tr2, _) = split_dataset(items.clone(), 0.8, 3, |t| &t.0).unwrap();
        assert_eq!(tr, tr2);
        for seed in 0..100 {
            let (tr, va) = split_dataset(items.clone(), 0.8, seed, |t| &t.0).unwrap();
            assert!(ids(&tr).is_disjoint(&ids(&va)));
        }
        assert!(split_dataset(vec![("a".to_string(), 0)], 0.8, 0, |t| &t.0).is_err());
        assert!(split_dataset(items, 1.0, 0, |t| &t.0).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let t = window_fixture();
        let rec = TrajectoryRecord::from_trajectory(&t, 7);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[rec.clone(), rec.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"scenario_id\":\"w\",\"seed\":7,\"target_slot\":["));
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![rec.clone(), rec]);
        assert_eq!(back[0].to_trajectory(0.2).unwrap(), t);
        let err = read_jsonl(&b"{\"scenario_id\":1}\n"[..]).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }));
    }
}
