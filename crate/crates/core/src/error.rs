use std::path::PathBuf;

/// Errors raised by the estimation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension: expected {expected}, got {actual}")]
    InvalidDimension { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown subject {0}")]
    UnknownSubject(String),

    #[error("duplicate subject {0}")]
    DuplicateSubject(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// The subject lies behind the camera; callers skip the measurement.
    #[error("subject {0} not visible")]
    NotVisible(String),

    #[error("rotation angle too close to pi for a well-conditioned logarithm")]
    IllConditionedLog,

    #[error("degenerate update: innovation covariance condition number {condition:.3e}")]
    DegenerateUpdate { condition: f64 },

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("state registry mismatch: {0}")]
    RegistryMismatch(String),

    #[error("log not time-ordered at entry {index}")]
    NotTimeOrdered { index: usize },

    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("at t = {time:.3} s: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("run {run}: {source}")]
    InRun {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: corrupt data: {reason}")]
    CorruptData {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    pub fn in_run(self, run: usize) -> Self {
        Error::InRun {
            run,
            source: Box::new(self),
        }
    }

    /// The innermost error, with step and run context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::AtTime { source, .. } | Error::InRun { source, .. } => {
                source.root()
            }
            e => e,
        }
    }

    /// True when the failure is numerical rather than a bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Numerical(_)
                | Error::DegenerateUpdate { .. }
                | Error::SingularCovariance(_)
                | Error::IllConditionedLog
                | Error::DegenerateGeometry(_)
        )
    }
}
