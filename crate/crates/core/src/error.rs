use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),

    #[error("negative value {value} at index {index}")]
    NegativeValue { index: usize, value: f64 },

    #[error("unknown series: location `{location}`, variable `{variable}`")]
    UnknownSeries { location: String, variable: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite; {0}")]
    NotPositiveDefinite(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    Collinear(Vec<String>),

    #[error("R-squared undefined: training targets are constant")]
    ConstantTarget,

    #[error("optimisation failed: {0}")]
    Optimization(String),

    #[error("non-finite training loss at epoch {0}")]
    NonFiniteLoss(usize),

    #[error("exact Shapley enumeration refuses {0} agents (limit {limit})", limit = crate::explain::MAX_AGENTS)]
    TooManyAgents(usize),

    #[error("no features selected for site `{site}`, target `{target}`; try a larger alpha")]
    EmptyFeatureSet { site: String, target: String },

    #[error("{0}")]
    Parse(String),

    #[error("fetch failed: {0}")]
    Fetch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
