//! Procedural parking-lot scenarios: static vehicle population, ego spawn
//! grid with jitter, expert demonstrations and the success criterion.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::geometry::{obb_intersect, wrap_angle, OrientedBox, Pose2D};
use crate::kinematics::{
    count_direction_changes, integrate_path, path_length, plan_candidates, sample_trajectory,
    PathSegment, SpeedProfile, VehicleParams,
};
use crate::trajectory::{Direction, Trajectory};

/// Success thresholds for a completed parking maneuver.
pub const SUCCESS_DISTANCE: f64 = 0.25;
pub const SUCCESS_HEADING_DEG: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub slot_id: u32,
    /// Slot center; the heading points out of the slot towards the lane.
    pub center: Pose2D,
    pub length: f64,
    pub width: f64,
}

/// Geometry and randomisation parameters of the synthetic lot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LotConfig {
    pub slots_per_row: u32,
    pub slot_length: f64,
    pub slot_width: f64,
    pub lane_width: f64,
    /// Free lane length past each end of the slot rows.
    pub lane_extension: f64,
    pub static_length: f64,
    pub static_width: f64,
    pub yaw_jitter_sigma_deg: f64,
    pub yaw_jitter_clip_deg: f64,
    pub grid_x_range: f64,
    pub grid_x_step: f64,
    pub grid_y_range: f64,
    pub grid_y_step: f64,
    pub spawn_jitter_pos: f64,
    pub spawn_jitter_yaw_deg: f64,
    pub collision_margin: f64,
    pub sweep_spacing: f64,
    pub max_attempts: usize,
    pub max_gear_shifts: usize,
    pub detour_factor: f64,
    pub vehicle: VehicleParams,
    pub speed: SpeedProfile,
}

impl Default for LotConfig {
    fn default() -> Self {
        Self {
            slots_per_row: 8,
            slot_length: 5.5,
            slot_width: 2.8,
            lane_width: 7.0,
            lane_extension: 12.0,
            static_length: 4.7,
            static_width: 1.9,
            yaw_jitter_sigma_deg: 3.0,
            yaw_jitter_clip_deg: 8.0,
            grid_x_range: 1.0,
            grid_x_step: 1.0,
            grid_y_range: 10.0,
            grid_y_step: 2.0,
            spawn_jitter_pos: 0.2,
            spawn_jitter_yaw_deg: 15.0,
            collision_margin: 0.1,
            sweep_spacing: 0.1,
            max_attempts: 20,
            max_gear_shifts: 3,
            detour_factor: 1.5,
            vehicle: VehicleParams::default(),
            // drivers re-steer at standstill after each cusp
            speed: SpeedProfile {
                v_max: 1.8,
                accel: 0.5,
                pause_frames: 15,
                ..SpeedProfile::default()
            },
        }
    }
}

impl LotConfig {
    /// Two facing rows of perpendicular slots on either side of a lane that
    /// runs along the y axis. Row 0 lies at negative x.
    pub fn build_lot(&self) -> Vec<SlotSpec> {
        let n = self.slots_per_row;
        let x_off = self.lane_width / 2.0 + self.slot_length / 2.0;
        let mut lot = Vec::with_capacity(2 * n as usize);
        for row in 0..2u32 {
            let (x, theta) = if row == 0 { (-x_off, 0.0) } else { (x_off, PI) };
            for i in 0..n {
                let y = (i as f64 - (n as f64 - 1.0) / 2.0) * self.slot_width;
                lot.push(SlotSpec {
                    slot_id: row * n + i,
                    center: Pose2D::new(x, y, theta),
                    length: self.slot_length,
                    width: self.slot_width,
                });
            }
        }
        lot
    }

    /// Lot boundary `(min_x, min_y, max_x, max_y)`.
    pub fn boundary(&self) -> (f64, f64, f64, f64) {
        let hx = self.lane_width / 2.0 + self.slot_length;
        let hy = self.slots_per_row as f64 * self.slot_width / 2.0 + self.lane_extension;
        (-hx, -hy, hx, hy)
    }

    pub fn ego_box(&self, pose: Pose2D) -> OrientedBox {
        OrientedBox {
            center: pose,
            half_length: self.vehicle.length / 2.0,
            half_width: self.vehicle.width / 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::InvalidLot(m.to_string()));
        if self.slots_per_row == 0 {
            return bad("slots_per_row must be positive");
        }
        if !(self.slot_length > self.slot_width && self.slot_width > 0.0) {
            return bad("slots need length > width > 0");
        }
        if !(self.grid_x_step > 0.0 && self.grid_y_step > 0.0) {
            return bad("grid steps must be positive");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        if !(self.sweep_spacing > 0.0 && self.sweep_spacing <= 0.1) {
            return bad("sweep_spacing must lie in (0, 0.1]");
        }
        Ok(())
    }
}

/// A generated scenario: lot, target, static vehicles and ego spawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub lot: Vec<SlotSpec>,
    pub target_slot_id: u32,
    pub static_vehicles: Vec<OrientedBox>,
    pub ego_spawn: Pose2D,
    pub grid_index: usize,
}

impl ScenarioConfig {
    pub fn target_slot(&self) -> &SlotSpec {
        self.lot
            .iter()
            .find(|s| s.slot_id == self.target_slot_id)
            .expect("validated target slot")
    }

    pub fn scenario_id(&self) -> String {
        scenario_id(self.seed, self.target_slot_id, self.grid_index)
    }
}

pub fn scenario_id(seed: u64, target_slot_id: u32, grid_index: usize) -> String {
    format!("s{seed}-t{target_slot_id}-g{grid_index}")
}

/// SplitMix64 finaliser used to derive independent sub-stream seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn find_slot(lot: &[SlotSpec], id: u32) -> Result<&SlotSpec, ScenarioError> {
    if lot.is_empty() {
        return Err(ScenarioError::EmptyLot);
    }
    lot.iter()
        .find(|s| s.slot_id == id)
        .ok_or(ScenarioError::UnknownSlot(id))
}

/// Fills every non-target slot with a vehicle parked head-in or back-in with
/// equal probability plus a clipped-normal yaw jitter.
pub fn populate_static_vehicles(
    lot: &[SlotSpec],
    target_slot_id: u32,
    cfg: &LotConfig,
    rng_seed: u64,
) -> Result<Vec<OrientedBox>, ScenarioError> {
    find_slot(lot, target_slot_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let normal = Normal::new(0.0, cfg.yaw_jitter_sigma_deg.max(1e-12)).expect("valid sigma");
    let clip = cfg.yaw_jitter_clip_deg;
    Ok(lot
        .iter()
        .filter(|s| s.slot_id != target_slot_id)
        .map(|s| {
            let base = if rng.random_bool(0.5) { 0.0 } else { PI };
            let jitter = normal.sample(&mut rng).clamp(-clip, clip).to_radians();
            OrientedBox {
                center: Pose2D::new(s.center.x, s.center.y, s.center.theta + base + jitter),
                half_length: cfg.static_length / 2.0,
                half_width: cfg.static_width / 2.0,
            }
        })
        .collect())
}

/// Deterministic spawn offsets, x outer and y inner.
pub fn spawn_grid(cfg: &LotConfig) -> Vec<(f64, f64)> {
    let axis = |range: f64, step: f64| -> Vec<f64> {
        let n = (2.0 * range / step + 1e-9).floor() as i64;
        (0..=n).map(|i| -range + i as f64 * step).collect()
    };
    let xs = axis(cfg.grid_x_range, cfg.grid_x_step);
    let ys = axis(cfg.grid_y_range, cfg.grid_y_step);
    xs.iter()
        .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
        .collect()
}

/// Base pose on the lane centerline abreast of the slot, driving along the lane.
pub fn spawn_base(slot: &SlotSpec) -> Pose2D {
    Pose2D::new(0.0, slot.center.y, PI / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpawnJitter {
    pub dx: f64,
    pub dy: f64,
    pub dyaw: f64,
}

impl SpawnJitter {
    pub fn sample<R: Rng>(cfg: &LotConfig, rng: &mut R) -> Self {
        let p = cfg.spawn_jitter_pos;
        let y = cfg.spawn_jitter_yaw_deg.to_radians();
        Self {
            dx: if p > 0.0 { rng.random_range(-p..=p) } else { 0.0 },
            dy: if p > 0.0 { rng.random_range(-p..=p) } else { 0.0 },
            dyaw: if y > 0.0 { rng.random_range(-y..=y) } else { 0.0 },
        }
    }
}

/// base + offset + jitter, componentwise, heading wrapped.
pub fn spawn_pose(base: &Pose2D, offset: (f64, f64), jitter: SpawnJitter) -> Pose2D {
    Pose2D::new(
        base.x + offset.0 + jitter.dx,
        base.y + offset.1 + jitter.dy,
        base.theta + jitter.dyaw,
    )
}

/// Position error below 0.25 m and heading error below 2.5°, where the slot
/// admits both head-in and back-in headings.
pub fn parking_success(final_pose: &Pose2D, slot: &SlotSpec) -> bool {
    let d = final_pose.distance(&slot.center);
    let dth = wrap_angle(final_pose.theta - slot.center.theta).abs();
    let dth = dth.min(PI - dth);
    d < SUCCESS_DISTANCE && dth < SUCCESS_HEADING_DEG.to_radians()
}

/// Swept-footprint collision check against static vehicles and the lot boundary.
pub fn path_collides(
    start: &Pose2D,
    segments: &[PathSegment],
    obstacles: &[OrientedBox],
    cfg: &LotConfig,
) -> bool {
    let footprint_hits = |pose: Pose2D| {
        let ego = cfg.ego_box(pose).inflated(cfg.collision_margin);
        let (x0, y0, x1, y1) = cfg.boundary();
        let outside = ego
            .corners()
            .iter()
            .any(|&(x, y)| x < x0 || x > x1 || y < y0 || y > y1);
        let r_ego = ego.half_length.hypot(ego.half_width);
        outside
            || obstacles.iter().any(|o| {
                let reach = r_ego + o.half_length.hypot(o.half_width);
                ego.center.distance(&o.center) <= reach && obb_intersect(&ego, o)
            })
    };
    if footprint_hits(*start) {
        return true;
    }
    let mut pose = *start;
    for seg in segments {
        let n = (seg.arc_length / cfg.sweep_spacing).ceil().max(1.0) as usize;
        for k in 1..=n {
            let p = seg.advance(&pose, seg.arc_length * k as f64 / n as f64);
            if footprint_hits(p) {
                return true;
            }
        }
        pose = seg.advance(&pose, seg.arc_length);
    }
    false
}

fn join(parts: &[&[PathSegment]]) -> Vec<PathSegment> {
    let mut out: Vec<PathSegment> = Vec::new();
    for part in parts {
        for seg in part.iter() {
            match out.last_mut() {
                Some(last) if last.direction == seg.direction && last.curvature == seg.curvature => {
                    last.arc_length += seg.arc_length;
                }
                _ => out.push(*seg),
            }
        }
    }
    out
}

/// Candidate expert plans from `spawn` into `slot`: direct Reeds-Shepp
/// paths and compositions through slot-aligned staging poses and lane
/// approach poses, for both head-in and back-in entry.
fn expert_plans(spawn: &Pose2D, slot: &SlotSpec, cfg: &LotConfig) -> Vec<Vec<PathSegment>> {
    let r = cfg.vehicle.min_turn_radius();
    let (s, c) = slot.center.theta.sin_cos();
    let mut plans = Vec::new();
    let shortest = |a: &Pose2D, b: &Pose2D| plan_candidates(a, b, r).ok().map(|mut v| v.swap_remove(0));

    for flip in [0.0, PI] {
        let goal = Pose2D::new(slot.center.x, slot.center.y, slot.center.theta + flip);
        if let Some(p) = shortest(spawn, &goal) {
            plans.push(p);
        }
        for depth in [2.0, 3.0, 4.0, 5.0] {
            let staging = Pose2D::new(slot.center.x + depth * c, slot.center.y + depth * s, goal.theta);
            let entry = PathSegment {
                direction: if flip == 0.0 {
                    Direction::Backward
                } else {
                    Direction::Forward
                },
                curvature: 0.0,
                arc_length: depth,
            };
            if let Some(p) = shortest(spawn, &staging) {
                plans.push(join(&[&p, &[entry]]));
            }
            for heading in [PI / 2.0, -PI / 2.0] {
                for lateral in [-1.0, 0.0, 1.0] {
                    for along in [-6.0, -3.0, 0.0, 3.0, 6.0] {
                        let approach = Pose2D::new(lateral, slot.center.y + along, heading);
                        let (Some(a), Some(b)) = (shortest(spawn, &approach), shortest(&approach, &staging)) else {
                            continue;
                        };
                        plans.push(join(&[&a, &b, &[entry]]));
                    }
                }
            }
        }
    }
    plans
}

/// Expert maneuver selected for a scenario.
#[derive(Debug, Clone)]
pub struct ExpertPlan {
    pub segments: Vec<PathSegment>,
    pub gear_shifts: usize,
    pub length: f64,
}

/// Collision-free expert plans sorted by length.
pub fn feasible_expert_plans(
    spawn: &Pose2D,
    slot: &SlotSpec,
    obstacles: &[OrientedBox],
    cfg: &LotConfig,
) -> Vec<ExpertPlan> {
    let mut plans: Vec<ExpertPlan> = expert_plans(spawn, slot, cfg)
        .into_iter()
        .filter(|p| parking_success(&integrate_path(spawn, p), slot))
        .filter(|p| !path_collides(spawn, p, obstacles, cfg))
        .map(|p| ExpertPlan {
            gear_shifts: count_direction_changes(&p),
            length: path_length(&p),
            segments: p,
        })
        .collect();
    plans.sort_by(|a, b| a.length.total_cmp(&b.length));
    plans
}

/// Generates one scenario and its expert demonstration.
///
/// Static vehicles depend only on `(seed, target_slot_id)`; spawn jitter is
/// redrawn per attempt until a collision-free expert plan exists.
pub fn generate_scenario(
    seed: u64,
    cfg: &LotConfig,
    target_slot_id: u32,
    grid_index: usize,
) -> Result<(ScenarioConfig, Trajectory), ScenarioError> {
    cfg.validate()?;
    let lot = cfg.build_lot();
    let slot = *find_slot(&lot, target_slot_id)?;
    let grid = spawn_grid(cfg);
    let offset = *grid.get(grid_index).ok_or(ScenarioError::GridIndex {
        index: grid_index,
        len: grid.len(),
    })?;
    let vehicles = populate_static_vehicles(&lot, target_slot_id, cfg, vehicle_seed(seed, target_slot_id))?;
    let base = spawn_base(&slot);

    for attempt in 0..cfg.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EED_0000 + (grid_index as u64) * 1024 + attempt as u64));
        let spawn = spawn_pose(&base, offset, SpawnJitter::sample(cfg, &mut rng));
        let mut plans = feasible_expert_plans(&spawn, &slot, &vehicles, cfg);
        plans.retain(|p| p.gear_shifts <= cfg.max_gear_shifts);
        if plans.is_empty() {
            continue;
        }
        let choice = choose_plan(&plans, cfg, &mut rng);
        let mut traj = sample_trajectory(&choice.segments, &spawn, &cfg.speed)?;
        let scenario = ScenarioConfig {
            seed,
            lot: lot.clone(),
            target_slot_id,
            static_vehicles: vehicles.clone(),
            ego_spawn: spawn,
            grid_index,
        };
        traj.scenario_ref = scenario.scenario_id();
        traj.target_slot = slot.center;
        return Ok((scenario, traj));
    }
    Err(ScenarioError::Infeasible {
        attempts: cfg.max_attempts,
    })
}

/// Picks a demonstration the way drivers differ: a shift count uniformly
/// among those available, then any plan of that
/// count no longer than `detour_factor` times its shortest.
fn choose_plan<'a, R: Rng>(plans: &'a [ExpertPlan], cfg: &LotConfig, rng: &mut R) -> &'a ExpertPlan {
    let mut counts: Vec<usize> = plans.iter().map(|p| p.gear_shifts).collect();
    counts.sort_unstable();
    counts.dedup();
    let k = counts[rng.random_range(0..counts.len())];
    let same: Vec<&ExpertPlan> = plans.iter().filter(|p| p.gear_shifts == k).collect();
    let limit = same[0].length * cfg.detour_factor;
    let n = same.iter().take_while(|p| p.length <= limit).count().max(1);
    same[rng.random_range(0..n)]
}

/// Seed of the static-vehicle stream, reproducible from the scenario record.
pub fn vehicle_seed(seed: u64, target_slot_id: u32) -> u64 {
    mix_seed(seed, 0xCA75_0000 + target_slot_id as u64)
}

/// Rebuilds the static vehicles of a stored scenario.
pub fn regenerate_vehicles(seed: u64, target_slot_id: u32, cfg: &LotConfig) -> Result<Vec<OrientedBox>, ScenarioError> {
    let lot = cfg.build_lot();
    populate_static_vehicles(&lot, target_slot_id, cfg, vehicle_seed(seed, target_slot_id))
}

/// Finds the slot whose center coincides with `pose` (within 1 mm).
pub fn slot_at(lot: &[SlotSpec], pose: &Pose2D) -> Option<u32> {
    lot.iter()
        .find(|s| s.center.distance(pose) < 1e-3)
        .map(|s| s.slot_id)
}
