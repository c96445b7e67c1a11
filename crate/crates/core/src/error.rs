use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("grid too small: {nx}x{ny} (need at least 3x3)")]
    GridTooSmall { nx: usize, ny: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),
    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(&'static str),
    #[error("grids do not match")]
    GridMismatch,
    #[error("flow times do not chain: first ends at {end}, second starts at {start}")]
    TimeMismatch { end: f64, start: f64 },
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("mollifier radius {epsilon} not resolvable (need >= {min})")]
    KernelUnresolvable { epsilon: f64, min: f64 },
    #[error("smoothing parameter must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("empty sequence")]
    EmptySequence,
    #[error("trajectory left the admissible box")]
    NonFiniteTrajectory,
    #[error("test function {0} does not vanish on the boundary ring or at t = 1")]
    TestFunctionSupportViolation(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("invalid kernel spec: {0}")]
    InvalidKernel(&'static str),
    #[error("invalid angle schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error("invalid model config: {0}")]
    InvalidConfig(&'static str),
    #[error("unknown phantom `{0}`")]
    UnknownPhantom(alloc::string::String),
    #[error("linear system is not positive definite")]
    NotPositiveDefinite,
}
