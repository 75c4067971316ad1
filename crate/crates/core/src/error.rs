use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance matrix is not symmetric (max relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("covariance matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e}, floor {floor:e})")]
    NotPositiveDefinite { min_eigenvalue: f64, floor: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("iterate is not in the convergent basin (alignment {alignment:e} <= 0)")]
    OutsideBasin { alignment: f64 },

    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("batch is already stabilized")]
    AlreadyStabilized,

    #[error("operation requires a stabilized batch")]
    NotStabilized,

    #[error("operation requires an unstabilized, uncentered batch")]
    AlreadyCentered,

    #[error("bootstrap initialization did not stabilize within {iterations} iterations (last angle change {last_angle:.3} rad)")]
    InitFailure { iterations: usize, last_angle: f64 },

    #[error("no signal: empirical eigen-gap ratio {gap:.4} is below {threshold}")]
    NoSignal { gap: f64, threshold: f64 },

    #[error("precondition violated: epsilon {epsilon} exceeds estimated SNR {snr:.4}")]
    EpsilonExceedsSnr { epsilon: f64, snr: f64 },

    #[error("sample source exhausted: requested {requested} points, {available} remain")]
    SourceExhausted { requested: usize, available: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("{failed} of {total} trials failed, above the 10% exclusion limit")]
    TooManyFailures { failed: usize, total: usize },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: crate::finite::Stage,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
