use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("hurst parameter {0} is outside the supported open interval (1/2, 1)")]
    InvalidHurst(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("covariance matrix is not positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("incompatible scales: {0}")]
    IncompatibleScale(String),

    #[error("solution became non-finite at node {node}")]
    BlowUp { node: usize },

    #[error("variation process (J, J^-1) is required but was not computed")]
    MissingVariation,

    #[error("step propagator is singular at node {node}")]
    SingularStep { node: usize },

    #[error("bracket enumeration would produce {count} words (cap {cap}); lower the level or raise the cap")]
    TooManyWords { count: usize, cap: usize },

    #[error("truncation level {level} exceeds the supported maximum {max}")]
    LevelTooLarge { level: usize, max: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid system description: {0}")]
    InvalidSystem(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
