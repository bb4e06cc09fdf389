use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("centers {left} and {right} are closer than the core width {delta}")]
    SeparationViolation { left: f64, right: f64, delta: f64 },
    #[error("center {center} outside the admissible range ({lo}, {hi})")]
    OutOfRange { center: f64, lo: f64, hi: f64 },
    #[error("segment {index} has zero length")]
    DegenerateSegment { index: usize },
    #[error("quadrature budget of {regions} regions exhausted with error estimate {error:e}")]
    BudgetExceeded { regions: usize, error: f64 },
    #[error("interface length {l} does not exceed the period {gamma}")]
    TooShort { l: f64, gamma: f64 },
    #[error("{n} dislocations of width {delta} do not fit on an interface of length {l}")]
    Infeasible { n: usize, delta: f64, l: f64 },
    #[error("no convergence after {iterations} iterations (projected gradient norm {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("slope {slope} needs spacing {spacing} below the core width {delta}; use a larger l")]
    SlopeTooSteep {
        slope: f64,
        spacing: f64,
        delta: f64,
    },
    #[error("cutoff {rho} is not below the minimal circular distance {min_dist}")]
    CutoffTooLarge { rho: f64, min_dist: f64 },
    #[error("points {0} and {1} coincide on the circle")]
    CoincidentPoints(usize, usize),
    #[error("points {0} and {1} sit exactly at the cutoff distance")]
    OnBoundary(usize, usize),
    #[error("offset k = {k} must lie in 1..={max}")]
    BadK { k: usize, max: usize },
    #[error("cutoff {rho} must exceed half the core width {half_delta}")]
    CutoffViolation { rho: f64, half_delta: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
