use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator, estimators and CLI plumbing.
#[derive(Debug, Error)]
pub enum Error {
    /// An input outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A pulse sequence that cannot be built as requested.
    #[error("structure error: {0}")]
    Structure(String),

    /// A non-resonant control pulse cannot be placed at the required detuning.
    #[error("gating error: {0}")]
    Gating(String),

    /// A two-state system with no transitions has no unique stationary point.
    #[error("stationary distribution undefined: both rates are zero")]
    UndefinedStationary,

    /// A nonlinear fit failed to converge.
    #[error("fit error: {message} (iterations={iterations}, residual_norm={residual_norm:.6e})")]
    Fit {
        message: String,
        iterations: usize,
        residual_norm: f64,
    },

    /// A configuration document failed to parse or validate.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Filesystem failure.
    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed CSV input.
    #[error("csv error: {0}")]
    Csv(String),

    /// A pipeline stage failed.
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 config/input, 3 fit failure, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Fit { .. } => 3,
            Error::Io { .. } | Error::Csv(_) => 4,
            _ => 2,
        }
    }

    /// Short machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::Domain(_) => "domain",
            Error::Structure(_) => "structure",
            Error::Gating(_) => "gating",
            Error::UndefinedStationary => "stationary",
            Error::Fit { .. } => "fit",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Stage { .. } => unreachable!(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
