use thiserror::Error;

/// Errors raised by kernel evaluation, quadrature, assembly and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlocalError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("coincident points: |x - y| = 0 at {0:?}")]
    CoincidentPoints(Vec<f64>),

    #[error("quadrature did not converge in {context}: estimate {estimate:e} > tolerance {tolerance:e}")]
    NonConvergence {
        context: String,
        estimate: f64,
        tolerance: f64,
    },

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("assembled matrix asymmetry {asymmetry:e} exceeds {limit:e}")]
    Asymmetry { asymmetry: f64, limit: f64 },

    #[error("advection field is not divergence free: {0}")]
    NotSolenoidal(String),

    #[error("factorization failed: non-positive pivot {value:e} at row {pivot}")]
    Factorization { pivot: usize, value: f64 },

    #[error("eigen-solver failure: {0}")]
    Eigen(String),

    #[error("explicit step dt = {dt:e} exceeds the stability bound {bound:e}")]
    StabilityBound { dt: f64, bound: f64 },

    #[error("fractional order s = {0} outside [0.5, 1) required with advection")]
    OrderOutOfRange(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, NonlocalError>;
