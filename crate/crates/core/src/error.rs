use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Riccati iteration did not converge after {iterations} iterations (last step {last_step:e})")]
    NonConvergence { iterations: usize, last_step: f64 },

    #[error("NotControllable: controllability matrix has rank {rank} < {n}")]
    NotControllable { rank: usize, n: usize },

    #[error("NotPositiveDefinite: {0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("closed loop A - BK is not stable (spectral radius {0})")]
    UnstableClosedLoop(f64),

    #[error("SingularMatrix: {0}")]
    SingularMatrix(&'static str),

    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),

    #[error("PatternViolation: {which}[{row},{col}] = {value} lies outside the prior pattern")]
    PatternViolation {
        which: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("LengthMismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("EmptyFeedbackSet: no feedback observations, no equations can be derived")]
    EmptyFeedbackSet,

    #[error("RankDeficient: {what} has rank {rank}, needs {needed}")]
    RankDeficient {
        what: &'static str,
        rank: usize,
        needed: usize,
    },

    #[error("EmptyMatrix: coefficient system has no rows")]
    EmptyMatrix,

    #[error("RetriesExhausted: no controllable system after {0} draws")]
    RetriesExhausted(usize),

    #[error("InvalidPattern: {0}")]
    InvalidPattern(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors that come from bad input rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::InvalidPattern(_)
                | Error::DimensionMismatch(_)
                | Error::LengthMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
