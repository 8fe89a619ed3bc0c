use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("laplacian has rank {rank}, expected {expected} (graph is disconnected)")]
    RankDeficient { rank: usize, expected: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("supply not balanced: 1ᵀ·supply = {0:e}")]
    Unbalanced(f64),

    #[error("graph is not connected")]
    Disconnected,

    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("oracle diverged: {0}")]
    Oracle(String),

    #[error("regulator equations infeasible (residual {residual:e}); rank check failed at eigenvalues {failing:?}")]
    Infeasible { residual: f64, failing: Vec<String> },

    #[error("interconnection contract violated: {0}")]
    Interconnection(String),

    #[error("controller requires a static optimal dual solution; no supply matrix available")]
    RequiresOptimizer,

    #[error("cannot assemble closed loop: {0}")]
    Assembly(String),

    #[error("state diverged at t = {time}: {reason}")]
    Divergence { time: f64, reason: String },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("csv: {0}")]
    Csv(String),
}
