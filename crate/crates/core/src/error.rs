use std::path::PathBuf;

use thiserror::Error;

use crate::evaluate::EvalError;
use crate::features::FeatureError;
use crate::ingest::IngestError;
use crate::lstm::LstmError;
use crate::metrics::MetricsError;
use crate::synth::SynthError;
use crate::train::{CheckpointError, TrainError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Exit status for the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) | Error::Config(_) => ErrorClass::Usage,
            Error::Lstm(_) | Error::Eval(EvalError::Lstm(_)) => ErrorClass::Numeric,
            Error::Train(TrainError::NonFiniteGradient { .. } | TrainError::Lstm(_)) => ErrorClass::Numeric,
            Error::Train(TrainError::InvalidConfig(_)) => ErrorClass::Usage,
            Error::Train(TrainError::Eval(EvalError::Lstm(_))) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}
