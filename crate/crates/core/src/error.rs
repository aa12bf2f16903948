use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] capvae_autodiff::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at epoch {epoch} step {step}; last finite loss {last_finite_loss:?}")]
    Diverged {
        epoch: usize,
        step: usize,
        last_finite_loss: Option<f64>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("singular covariance: {0}")]
    Singular(String),

    #[error("information bound violated: {0}")]
    BoundViolation(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Empty(_) => "empty",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
            Error::Singular(_) => "singular",
            Error::BoundViolation(_) => "bound_violation",
            Error::Csv(_) => "csv",
        }
    }
}
