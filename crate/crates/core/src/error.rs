use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes shared by every module.
///
/// Contract violations (bad inputs, violated preconditions) are kept apart
/// from numeric failures so front ends can map them to different exit codes;
/// see [`Error::is_numeric`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("not normalized: total probability {total} deviates from 1 by more than {tolerance:e}")]
    NotNormalized { total: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operator is not Hermitian (max |A - A^dagger| = {0:e})")]
    NotHermitian(f64),

    #[error("numeric failure at step {step}: {reason}")]
    NumericFailure { step: usize, reason: String },

    #[error("step-size guard violated at step {step}: {detail}")]
    StepGuard { step: usize, detail: String },

    #[error("degenerate occupation at site {site}: P = {probability:e} is below the floor while current flows")]
    DegenerateOccupation { site: usize, probability: f64 },

    #[error("energy uncertainty beyond the Planck scale: k = {k} > 1")]
    SuperPlanckian { k: f64 },

    #[error("phase ambiguity: the density vanishes inside the support, splitting it into {runs} pieces")]
    PhaseAmbiguity { runs: usize },

    #[error("events are not spacelike separated, no frame makes them simultaneous")]
    NotSpacelike,

    #[error("velocity {v} is not below the speed of light {c}")]
    Superluminal { v: f64, c: f64 },

    #[error("pointer grid too small: {0}")]
    PointerDomain(String),

    #[error("no coincident stay pairs found at tolerance {tolerance:e}")]
    InsufficientOverlap { tolerance: f64 },

    #[error("malformed run file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the arithmetic itself (NaN, overflow, step-size
    /// guards tripping mid-run) as opposed to invalid inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericFailure { .. } | Error::StepGuard { .. } | Error::SuperPlanckian { .. }
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
