//! Dual-branch autoregressive parking planner: model, losses and training.

pub mod config;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod train;

pub use config::{Ablation, DataSplit, Decoding, LossWeights, ModelConfig, TargetInput, TrainConfig, WaypointObjective};
pub use error::PlannerError;
pub use model::{Planner, PlannerOutput};
pub use train::{train, EpochTrace, Prepared, TrainOutcome, TrainStatus};
