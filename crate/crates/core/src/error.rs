use thiserror::Error;

/// Errors raised by the shrinkage, fitting and adjustment routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("component {component} covariance is not PSD (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { component: usize, min_eigenvalue: f64 },

    #[error("mixture weights invalid: {reason}")]
    WeightsInvalid { reason: String },

    #[error("target rank {rank} outside 1..={dim}")]
    RankOutOfRange { rank: usize, dim: usize },

    #[error("covariance is singular or not positive definite ({context})")]
    SingularCovariance { context: String },

    #[error("vector is not unit length (norm {norm})")]
    NotUnitVector { norm: f64 },

    #[error("condition {condition} has zero posterior variance under every eigen-direction")]
    DegenerateCondition { condition: usize },

    #[error("index set is empty")]
    EmptySet,

    #[error("component {component} collapsed (effective size {effective_size:e})")]
    DegenerateComponent { component: usize, effective_size: f64 },

    #[error("log-likelihood decreased by {drop:e} at iteration {iteration}")]
    NoIncrease { iteration: usize, drop: f64 },

    #[error("dimension {dim} too small, need at least {min}")]
    DimensionTooSmall { dim: usize, min: usize },

    #[error("information matrix is singular: {context}")]
    SingularInformation { context: String },

    #[error("T_i = U + D + V_i is not positive definite for sample {sample}")]
    SingularT { sample: usize },

    #[error("unknown variance bound target '{0}'")]
    UnknownTarget(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
