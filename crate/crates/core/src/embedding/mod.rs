//! CNN embedding of log-CQT patches trained with a triplet loss.

mod arch;
pub mod checkpoint;
mod loss;
mod model;
mod optim;
mod train;

use thiserror::Error;

pub use arch::{ArchConfig, ConvLayer, ConvShape};
pub use checkpoint::{load_model, save_model};
pub use loss::{triplet_loss, triplet_loss_grad, triplet_term};
pub use model::{Layer, Model, Params};
pub use optim::{AdamConfig, AdamState};
pub use train::{
    batch_gradient, batch_loss, embed_track, grad_step, train, CsvTrainLogs, EmbeddingSequence, EpochLog,
    SamplerKind, TrainConfig, TrainObserver, TrainOutcome, TripletBatch, TripletRecord,
};

use crate::features::FeatureError;
use crate::sampling::SamplingError;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("expected input of shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("no tracks to train on")]
    EmptyDataset,
    #[error("checkpoint checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("checkpoint architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
