use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Coarse classification used by callers that map failures to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Configuration,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("value outside the numeric domain: {0}")]
    NumericDomain(String),

    #[error("covariance is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    TrainingDivergence { epoch: usize, batch: usize },

    #[error("too few samples: {got} provided, at least {needed} required")]
    TooFewSamples { needed: usize, got: usize },

    #[error("mixture component {component} is wider than the proposal")]
    ComponentWiderThanProposal { component: usize },

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("trajectory too short: {len} transitions, at least 2 required")]
    TooShortTrajectory { len: usize },

    #[error("trajectory diverged at step {step}")]
    DivergedTrajectory { step: usize },

    #[error("parameter {name} = {value} outside [{low}, {high}]")]
    ParameterOutOfBounds {
        name: String,
        value: f64,
        low: f64,
        high: f64,
    },

    #[error("insufficient samples for density estimate: {got} provided, at least {needed} required")]
    InsufficientSamples { needed: usize, got: usize },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::TooFewSamples { .. }
            | Error::ParameterOutOfBounds { .. }
            | Error::InsufficientSamples { .. }
            | Error::TooShortTrajectory { .. } => ErrorKind::Configuration,
            Error::NumericDomain(_)
            | Error::NotPositiveDefinite(_)
            | Error::TrainingDivergence { .. }
            | Error::ComponentWiderThanProposal { .. }
            | Error::DegeneratePosterior(_)
            | Error::DivergedTrajectory { .. } => ErrorKind::Numeric,
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}
