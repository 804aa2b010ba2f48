use thiserror::Error;

/// Errors raised by the geometry, flow and verification kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("axis {axis} out of range for a {dim}-dimensional chart")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("axis {axis} has {points} points, stencil needs at least {needed}")]
    GridTooSmall { axis: usize, points: usize, needed: usize },
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("rank {rank} exceeds the supported maximum {max}")]
    RankOverflow { rank: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("metric is singular or indefinite at grid point {point}")]
    SingularMetric { point: usize },
    #[error("tensor is not symmetric (defect {defect:e})")]
    Asymmetric { defect: f64 },
    #[error("degenerate fiber block at grid point {point}")]
    DegenerateFiber { point: usize },
    #[error("invalid slot selection: {0}")]
    Slots(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("flow stopped at t = {time}: {reason}")]
    FlowBreakdown { time: f64, reason: String },
    #[error("series error: {0}")]
    Series(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
