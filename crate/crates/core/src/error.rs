use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operator too large to materialize: {rows}x{cols}")]
    TooLarge { rows: usize, cols: usize },

    #[error("distance must be positive, got {0} km")]
    NonPositiveDistance(f64),

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("iteration {iter}: non-finite message in {stage}")]
    Diverged { iter: usize, stage: &'static str },

    #[error("noise level {tau} outside model domain [{min}, {max}]")]
    OutOfDomain { tau: f64, min: f64, max: f64 },

    #[error("degenerate mixture: {0}")]
    DegenerateMixture(String),

    #[error("quadrature grid too coarse (estimated error {0:e})")]
    GridTooCoarse(f64),

    #[error("score model lacks a second-order head")]
    MissingSecondOrder,

    #[error("bridge: {0}")]
    Bridge(String),

    #[error("denoiser failed on batch of {devices} devices: {source}")]
    Denoiser {
        devices: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {trials} trials failed; first: {source}")]
    TooManyFailures {
        failed: usize,
        trials: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no active devices in ground truth")]
    NoActiveDevices,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

impl Error {
    /// Innermost error of a wrapped chain.
    pub fn root(&self) -> &Error {
        match self {
            Error::Denoiser { source, .. } | Error::TooManyFailures { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
