//! The per-AID next-data-field predictor: stacked LSTM layers, a ReLU dense
//! layer with dropout, and a 64-wide output layer.

use thiserror::Error;

pub mod config;
pub mod gradcheck;
pub mod io;
mod linalg;
pub mod network;
pub mod params;
pub mod train;

pub use config::{ModelConfig, OutputActivation, FIELD_BITS};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use io::{decode_model, encode_model, load_model, save_model};
pub use network::{
    backward, forward, forward_batch, gradients, lstm_cell_step, loss, predict, predict_many, Mode,
};
pub use params::{init_model, DenseParams, LstmLayerParams, ModelParams};
pub use train::{train, train_with_progress, TrainReport};

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("model format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file size mismatch: {0}")]
    SizeMismatch(String),
}
