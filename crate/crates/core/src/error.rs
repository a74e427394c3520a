use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric: |A[{i}][{j}] - A[{j}][{i}]| = {diff:e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {lambda1})")]
    NotPositiveDefinite { lambda1: f64 },

    #[error("assumption {assumption} violated: {detail}")]
    AssumptionViolation { assumption: u8, detail: String },

    #[error("model produced a non-finite value at {point:?}")]
    ModelEvaluation { point: Vec<f64> },

    #[error("implicit solve did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        best: Vec<f64>,
        residual: f64,
        iterations: usize,
    },

    #[error("path {path} failed at step {step}: {source}")]
    PathFailure {
        path: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} paths failed, above the 10% abort threshold")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("diffusion vanishes inside the domain near x = {x}")]
    Domain { x: f64 },

    #[error("stationary density is not integrable on the domain: {0}")]
    DivergentDensity(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
