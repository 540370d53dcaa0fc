use thiserror::Error;

use crate::linalg::SymMatrix;

pub type Result<T> = std::result::Result<T, TagmError>;

#[derive(Debug, Error)]
pub enum TagmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// The solver ran out of iterations. The last iterate is kept so callers
    /// can decide whether it is good enough.
    #[error("graphical lasso did not converge in {iterations} iterations (kkt residual {residual:e})")]
    GlassoNotConverged {
        iterations: usize,
        residual: f64,
        last: Box<SymMatrix>,
    },

    #[error("degenerate emission at step {step}: every state assigns zero likelihood")]
    DegenerateEmission { step: usize },

    #[error("state {state} has total responsibility {mass:e}")]
    EmptyState { state: usize, mass: f64 },

    #[error("all {restarts} restarts failed; last error: {last}")]
    FitFailed { restarts: usize, last: String },

    #[error("penalized log-likelihood dropped by {drop:e} at iteration {iteration}")]
    NonMonotone { iteration: usize, drop: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stability analysis failed: {0}")]
    Stability(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
