use thiserror::Error;

/// Errors shared across the numerical modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid signed measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid segment: {0}")]
    InvalidSegment(String),

    #[error("evaluation point {theta} outside [-{tau}, 0]")]
    OutOfDomain { theta: f64, tau: f64 },

    #[error("segment derivative values required but absent")]
    MissingDerivative,

    #[error("contour passes too close to a zero (min |char| = {min_abs:.3e}); perturb the box")]
    ContourNearZero { min_abs: f64 },

    #[error("root search exceeded its subdivision budget")]
    BudgetExceeded,

    #[error("neutral state recovery did not contract (Var(rho) mass too close to 0)")]
    NeutralRecoveryFailure,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),

    #[error("array length mismatch: {0}")]
    LengthMismatch(String),

    #[error("time {t} not on the simulation grid (dt = {dt})")]
    OffGrid { t: f64, dt: f64 },

    #[error("empty sample set")]
    EmptySamples,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error:\n{}", .0.join("\n"))]
    Config(Vec<String>),
}
