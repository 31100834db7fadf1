use thiserror::Error;

/// Errors raised by the modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("decomposition failed: {0}")]
    DecompositionFailure(String),

    #[error("integration failed at t = {t_last}: {reason}")]
    IntegrationFailure { t_last: f64, reason: String },

    #[error("ill-conditioned {what} (condition number {condition:.3e})")]
    IllConditioned { what: String, condition: f64 },

    #[error("manifold fit suspects a fold over the tangent space: {0}")]
    FoldSuspected(String),

    #[error("{what} did not converge after {iterations} iterations (final cost {cost:.6e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        cost: f64,
    },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("outside validity range; largest admissible amplitude is {rho_max:.6e}")]
    ValidityRange { rho_max: f64 },

    #[error("degenerate forcing: {0}")]
    DegenerateForcing(String),

    #[error("continuation seed failed: {0}")]
    SeedFailure(String),

    #[error("calibration out of range: {0}")]
    CalibrationOutOfRange(String),

    #[error("unsupported or malformed file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
