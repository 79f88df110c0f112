use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("dispersion is not identifiable with M = {sensors} sensors (at least 3 are required)")]
    NotIdentifiable { sensors: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "order D = {order} is outside [2, {d_max}] for this {kind} array of M = {sensors} sensors \
         (D_max = {formula})"
    )]
    OrderBound {
        order: usize,
        d_max: usize,
        sensors: usize,
        kind: &'static str,
        formula: String,
    },

    #[error(
        "weight matrix is ill-conditioned (condition number {condition:.3e} > {limit:.0e}); \
         use at least N >= M snapshots or a positive ridge"
    )]
    IllConditionedWeight { condition: f64, limit: f64 },

    #[error(
        "normal equations are degenerate for order D = {order} \
         (condition estimate {condition:.3e}); reduce D"
    )]
    DegenerateNormalEquations { order: usize, condition: f64 },

    #[error("model covariance is numerically singular")]
    SingularModel,

    #[error("covariance is indefinite (minimum eigenvalue {min_eigenvalue:.3e})")]
    InvalidCovariance { min_eigenvalue: f64 },

    #[error("search interval [{lo}, {hi}) is empty")]
    EmptySearchInterval { lo: f64, hi: f64 },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
