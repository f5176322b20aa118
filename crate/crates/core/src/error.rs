use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operator is not unitary (max deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("invalid subsystem index {index} for {count} subsystems")]
    InvalidSubsystem { index: usize, count: usize },

    #[error("projector set is incomplete: probabilities sum to {sum}")]
    IncompleteProjectors { sum: f64 },

    #[error("sampled outcome {index} has vanishing probability {probability:.3e}")]
    ZeroProbabilityOutcome { index: usize, probability: f64 },

    #[error("expected a single-qubit state, got dimension {0}")]
    NotAQubit(usize),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unknown nuclear spin id {0}")]
    UnknownSpin(u32),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("integration unstable at t = {t_ns} ns (population {value}); reduce dt")]
    UnstableStep { t_ns: f64, value: f64 },

    #[error("fit did not converge after {iterations} iterations (residual norm {residual_norm:.4e})")]
    NonConvergence { iterations: usize, residual_norm: f64 },

    #[error("fit input invalid: {0}")]
    FitInput(String),

    #[error("no click obtained within {0} repetitions")]
    NoClick(usize),

    #[error("no surviving trajectories at checkpoint N = {0}")]
    NoSurvivors(usize),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
