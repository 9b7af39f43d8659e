//! Demonstration trajectories sampled at a fixed rate.

use serde::{Deserialize, Serialize};

use crate::geometry::Pose2D;

/// Speed dead band separating forward, reverse and stationary frames (m/s).
pub const STATIONARY_SPEED: f64 = 0.05;

/// Default sampling period: 5 Hz.
pub const DEFAULT_DT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MotionState {
    #[serde(rename = "F")]
    Forward,
    #[serde(rename = "R")]
    Reverse,
    #[serde(rename = "S")]
    Stationary,
}

impl MotionState {
    pub fn from_speed(v: f64) -> Self {
        if v > STATIONARY_SPEED {
            MotionState::Forward
        } else if v < -STATIONARY_SPEED {
            MotionState::Reverse
        } else {
            MotionState::Stationary
        }
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            MotionState::Forward => Some(Direction::Forward),
            MotionState::Reverse => Some(Direction::Backward),
            MotionState::Stationary => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            MotionState::Forward => 'F',
            MotionState::Reverse => 'R',
            MotionState::Stationary => 'S',
        }
    }
}

/// Longitudinal driving direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }

    /// Class index used by the motion head: forward = 0, backward = 1.
    pub fn class_index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Self {
        if i == 0 {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }

    pub fn as_state(self) -> MotionState {
        match self {
            Direction::Forward => MotionState::Forward,
            Direction::Backward => MotionState::Reverse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub pose: Pose2D,
    /// Signed longitudinal speed, negative when reversing.
    pub speed: f64,
    /// Throttle command in [0, 1].
    pub throttle: f64,
    pub motion_state: MotionState,
}

/// Time-ordered frames with constant spacing `dt`; frame `k` is at time `k * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Frame>,
    pub dt: f64,
    pub scenario_ref: String,
    pub target_slot: Pose2D,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.speed).collect()
    }

    pub fn states(&self) -> Vec<MotionState> {
        self.frames.iter().map(|f| f.motion_state).collect()
    }

    pub fn poses(&self) -> Vec<Pose2D> {
        self.frames.iter().map(|f| f.pose).collect()
    }

    pub fn final_pose(&self) -> Option<Pose2D> {
        self.frames.last().map(|f| f.pose)
    }

    /// Polyline length of the sampled positions.
    pub fn path_length(&self) -> f64 {
        self.frames
            .windows(2)
            .map(|w| w[0].pose.distance(&w[1].pose))
            .sum()
    }

    /// Mean absolute speed over all frames (m/s).
    pub fn average_speed(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.speed.abs()).sum::<f64>() / self.frames.len() as f64
    }
}
