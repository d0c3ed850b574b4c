use thiserror::Error;

/// Errors shared across the estimation workbench.
#[derive(Debug, Error)]
pub enum DseError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {context} (machine {machine})")]
    NonFinite { context: String, machine: usize },

    #[error("simulation diverged at t = {t:.4} s")]
    Diverged { t: f64 },

    #[error("innovation covariance is singular")]
    SingularUpdate,

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("constant estimation failed: {0}")]
    Estimation(String),

    #[error("LMI infeasible after {iterations} iterations (best max eigenvalue {best_eig:.6e})")]
    LmiInfeasible { iterations: usize, best_eig: f64 },

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DseError>;
