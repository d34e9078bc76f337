use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no jump threshold in (0, {upper}) gives tail intensity {target}")]
    NoThreshold { target: f64, upper: f64 },

    #[error("level mismatch: coarse level {coarse} must be fine level {fine} minus one")]
    LevelMismatch { fine: u32, coarse: u32 },

    #[error("level {level} outside the precomputed range 0..={max}")]
    LevelOutOfRange { level: u32, max: u32 },

    #[error("misaligned arrays: expected length {expected}, found {found}")]
    Misaligned { expected: usize, found: usize },

    #[error("non-finite state at level {level}, Euler step {step}")]
    NonFiniteState { level: u32, step: usize },

    #[error("all particle weights are zero at time step {step}")]
    DegenerateWeights { step: usize },

    #[error("non-finite Metropolis-Hastings ratio at iteration {iteration}")]
    NonFiniteRatio { iteration: usize },

    #[error("chain initialization failed after {attempts} attempts: {last}")]
    InitializationFailed { attempts: usize, last: String },

    #[error("correction task k={state} at level {level} failed: {source}")]
    CorrectionTask {
        state: usize,
        level: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("estimator denominator is zero")]
    ZeroDenominator,
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
