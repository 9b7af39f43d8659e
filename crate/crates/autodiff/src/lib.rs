//! Reverse-mode automatic differentiation over dense row-major tensors,
//! with the optimizer, schedule and checkpoint format used for training.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use error::AutodiffError;
pub use graph::{AttnMask, Graph, NodeGrads, Var};
pub use optim::{adam_step, clip_gradients, Gradients, LrSchedule, ParamId, ParameterStore, StepReport};
pub use tensor::{Element, Tensor};
