//! Geometry, synthetic scenario generation, dataset preparation, target
//! encoding and evaluation metrics for the multi-shot parking workbench.

pub mod corpus;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod metrics;
pub mod scenario;
pub mod trajectory;

pub use error::{DatasetError, EncodingError, GeometryError, MetricsError, ScenarioError};
pub use geometry::{normalize_angle, obb_intersect, pose_in_frame, OrientedBox, Pose2D};
pub use kinematics::{plan_expert_path, sample_trajectory, PathSegment, SpeedProfile, VehicleParams};
pub use trajectory::{Direction, Frame, MotionState, Trajectory};
