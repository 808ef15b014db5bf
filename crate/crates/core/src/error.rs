use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("angle {0} lies outside (0, 2π]")]
    AngleOutOfRange(f64),
    #[error("lattice truncation radius must be nonnegative, got {0}")]
    EmptyGrid(i64),
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("empty data set")]
    EmptyData,
    #[error("residual adjustment function undefined at delta = {delta}")]
    DomainError { delta: f64 },
    #[error("invalid tuning constant {0}")]
    InvalidTau(f64),
    #[error("no bandwidth meets the target weight in the search interval")]
    NoSolution,
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("covariance update lost positive definiteness")]
    SingularCovariance,
    #[error("all weights are zero")]
    AllWeightsZero,
    #[error("no start converged")]
    NoConvergedRoot,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
