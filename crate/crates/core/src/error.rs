use thiserror::Error;

/// Errors raised across assembly, solving, time stepping and experiment orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sector basis for n={n}, M={nodes} would hold {size} entries (limit {limit})")]
    Capacity { n: usize, nodes: usize, size: u128, limit: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("inadmissible Robin coefficients: {0}")]
    Inadmissible(String),

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
