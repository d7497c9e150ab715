use thiserror::Error;

use crate::conductor::PathError;
use crate::squad::DataError;
use crate::tensor::TensorError;
use crate::trainer::CheckpointError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("build error at step {step}: {reason}")]
    Build { step: String, reason: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
