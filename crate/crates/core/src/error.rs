use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },

    #[error("grid is not symmetric about the midplane of axis {0}")]
    AsymmetricGrid(usize),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("kernel evaluated on the diagonal x = y")]
    SingularDiagonal,

    #[error("argument outside the hypotheses of the {kind} inequality: {reason}")]
    Hypothesis { kind: &'static str, reason: String },

    #[error("function is not strictly positive at interior node {node} (value {value})")]
    NotPositive { node: usize, value: f64 },

    #[error("{what} did not converge after {iterations} iterations (last metric {metric:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        metric: f64,
    },

    #[error("minimizer is negative beyond tolerance at node {node} (value {value:e})")]
    NegativeMinimizer { node: usize, value: f64 },

    #[error("linear solve failed: {0}")]
    Linear(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
