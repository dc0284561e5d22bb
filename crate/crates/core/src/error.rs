use thiserror::Error;

/// Errors raised by the estimation, testing and power routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cluster {cluster} has an empty treatment or control arm")]
    EmptyArm { cluster: String },

    #[error("inconsistent counts: {0}")]
    BadCounts(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("mechanism {mechanism} has no clusters")]
    MissingMechanism { mechanism: usize },

    #[error("mechanism {mechanism} has {clusters} cluster(s); at least 2 are required")]
    DegenerateMechanism { mechanism: usize, clusters: usize },

    #[error("cluster {cluster} has fewer than two units in one arm")]
    TinyArm { cluster: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported contrast: {0}")]
    BadKind(String),

    #[error("contrast matrix has {rows} rows but rank {rank}")]
    RankDeficient { rows: usize, rank: usize },

    #[error("covariance of the contrast is singular (condition number {condition:e})")]
    SingularCovariance { condition: f64 },

    #[error("{name} must lie strictly between 0 and 1, got {value}")]
    BadProbability { name: &'static str, value: f64 },

    #[error("root finding did not converge: {0}")]
    NoConvergence(String),

    #[error("conservative formula requires r >= 1/(n+1) = {bound:.6}, got r = {r}")]
    ConservativeConditionViolated { r: f64, bound: f64 },

    #[error("alternative hypothesis has zero effect size")]
    ZeroAlternative,

    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("cell (z = {z}, mechanism {mechanism}) has no observations")]
    EmptyCell { z: u8, mechanism: usize },

    #[error("cluster sizes must all be equal")]
    UnequalClusters,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),
}

impl Error {
    /// True for failures caused by numerical conditioning rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularCovariance { .. }
                | Error::NoConvergence(_)
                | Error::NotSpd
                | Error::RankDeficient { .. }
                | Error::Internal(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
