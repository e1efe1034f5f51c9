use thiserror::Error;

/// Errors raised by the solver toolkit.
#[derive(Debug, Error)]
pub enum MfcError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model parameters: {0}")]
    InvalidModel(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Bracket expansion in the scalar root solver ran past the configured cap.
    #[error("unbounded model: root bracket exceeded mu_max = {mu_max:e} (gamma = {gamma}, |p| = {p_norm})")]
    Unbounded { mu_max: f64, gamma: f64, p_norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("infeasible dual state: {0}")]
    InfeasibleDual(String),

    #[error("model audit failed: {0}")]
    AuditFailed(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MfcError>;
