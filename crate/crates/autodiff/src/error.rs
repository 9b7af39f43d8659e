use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {a:?} and {b:?}")]
    Shape {
        op: &'static str,
        a: Vec<usize>,
        b: Vec<usize>,
    },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("shape {shape:?} needs {} elements, got {len}", .shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("non-finite gradient norm {0}")]
    NonFiniteGradient(f64),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
