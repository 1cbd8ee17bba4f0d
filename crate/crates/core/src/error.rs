use thiserror::Error;

/// Which of the two samples an error refers to.
pub type SampleIndex = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("sample {0} is empty")]
    EmptySample(SampleIndex),
    #[error("sample {0} has no positive observations")]
    NoPositives(SampleIndex),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("exp(theta'Q(x)) overflows at linear predictor {0}")]
    OverflowGuard(f64),
    #[error("zero proportion of sample {0} is on the boundary (0 or 1); variance formulas are undefined")]
    BoundaryNu(SampleIndex),
    #[error("Newton ascent did not converge in {iterations} iterations (sup-norm gradient {grad_norm:e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        best: Vec<f64>,
    },
    #[error("tilt parameter norm {theta_norm} exceeds {bound}; the samples may be separated by the basis")]
    SeparationSuspected { theta_norm: f64, bound: f64 },
    #[error("A_theta is numerically singular (condition number {condition:e})")]
    SingularAtheta { condition: f64 },
    #[error("covariance estimate is singular (condition number {condition:e})")]
    SingularGamma { condition: f64 },
    #[error("estimated variance {0} is negative")]
    NegativeVariance(f64),
    #[error("log-scale interval needs a positive estimate, got {0}")]
    NonPositivePhi(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("division by zero: {0}")]
    DivisionByZero(String),
    #[error("bootstrap resampling failed: {0}")]
    DegenerateResample(String),
}

pub type Result<T> = std::result::Result<T, Error>;
