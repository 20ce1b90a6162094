use std::path::PathBuf;

use crate::model::LegIndex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("leg {leg:?} is at a kinematic singularity (|det J| = {det:e})")]
    SingularJacobian { leg: LegIndex, det: f64 },

    #[error("foot target of leg {leg:?} is out of reach at t = {t} s")]
    Unreachable { leg: LegIndex, t: f64 },

    #[error("non-finite value in {0}")]
    NonFiniteState(&'static str),

    #[error("non-finite measurement channel: {0}")]
    NonFiniteMeasurement(&'static str),

    #[error("innovation covariance is not positive definite")]
    SingularInnovation,

    #[error("filter bank degenerated: {0}")]
    DegenerateBank(&'static str),

    #[error("invalid probability {name} = {value}")]
    InvalidProbability { name: String, value: f64 },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
