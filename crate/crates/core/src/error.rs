use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid loss model: {0}")]
    InvalidModel(String),
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
    #[error("design point index {index} out of range for {len} points")]
    InvalidIndex { index: usize, len: usize },
    #[error("CGF undefined at theta = {theta}")]
    CgfDomain { theta: f64 },
    #[error("no analytic CGF for this model kind")]
    NoAnalyticCgf,
    #[error("empty sample set")]
    EmptySamples,
    #[error("point {0} has no samples")]
    NoSamples(usize),
    #[error("variance estimate needs at least two samples, point {0} has {1}")]
    TooFewSamples(usize, usize),
    #[error("table sampler exhausted at point {point}: requested {requested}, {remaining} left")]
    TableExhausted {
        point: usize,
        requested: usize,
        remaining: usize,
    },
    #[error("gamma must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("epsilon must exceed the discretization error {discretization}")]
    EpsilonTooSmall { discretization: f64 },
    #[error("regret event has zero probability at this epsilon: Q(delta) is empty")]
    EmptyQSet,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("exponent search did not converge for pair ({x}, {y})")]
    PairUnconverged { x: usize, y: usize },
    #[error("degenerate allocation problem: {0}")]
    InvalidProblem(String),
    #[error("brute-force oracle supports at most {max} points, got {got}")]
    OracleTooLarge { max: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
