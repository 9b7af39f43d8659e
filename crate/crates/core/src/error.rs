use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid box extents: half_length={half_length}, half_width={half_width}")]
    InvalidBox { half_length: f64, half_width: f64 },
    #[error("invalid parameter {name}={value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("no path family connects the two poses")]
    PlanningFailed,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("target slot {0} is not part of the lot")]
    UnknownSlot(u32),
    #[error("lot is empty")]
    EmptyLot,
    #[error("grid index {index} out of range (grid has {len} cells)")]
    GridIndex { index: usize, len: usize },
    #[error("scenario infeasible after {attempts} attempts")]
    Infeasible { attempts: usize },
    #[error("invalid lot: {0}")]
    InvalidLot(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("trajectory contains no motion")]
    EmptySlice,
    #[error("need at least 2 scenarios to split, got {0}")]
    TooFewScenarios(usize),
    #[error("split ratio must lie in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("horizon must be >= 1")]
    BadHorizon,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("token {token} outside [0, {vocab})")]
    TokenOutOfRange { token: u32, vocab: u32 },
    #[error("malformed sequence: {0}")]
    MalformedSequence(String),
    #[error("invalid parameter {name}={value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
}
