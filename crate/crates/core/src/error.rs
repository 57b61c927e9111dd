use thiserror::Error;

/// Errors raised by the continuation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("field belongs to a different mesh or has the wrong length")]
    MeshMismatch,

    #[error("linear solve failed: {context} (relative residual {residual:.3e})")]
    LinearSolve { context: String, residual: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("density is not positive at node {node}")]
    NonPositiveDensity { node: usize },

    #[error("Newton iteration did not converge after {iterations} iterations at lambda = {lambda} (residual {residual:.3e})")]
    NonConvergence {
        lambda: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("Jacobian is numerically singular at lambda = {lambda}; switch to arclength continuation")]
    NearFold { lambda: f64 },

    #[error("degenerate weighted geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("eigensolver did not converge after {iterations} expansions (worst residual {residual:.3e})")]
    EigenNonConvergence { iterations: usize, residual: f64 },

    #[error("energy is not strictly increasing between rows {0:?}")]
    NonMonotoneEnergy(Vec<usize>),

    #[error("degenerate fold at lambda = {lambda}: a* = {a_star:.3e} does not exceed the margin")]
    DegenerateFold { lambda: f64, a_star: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
