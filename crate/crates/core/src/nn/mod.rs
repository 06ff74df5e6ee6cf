//! Temporal-domain 1D CNN trained from scratch.
//!
//! Nine conv blocks (convolution, batch norm, ReLU, max-pool, dropout) feed
//! five fully-connected blocks and a two-way output layer. Gradients are
//! computed in closed form by [`backward`]; [`adam_step`] applies Adam with
//! L2 decay on kernels and weight matrices. Everything runs in `f64`.

mod adam;
mod config;
mod io;
mod layers;
mod loss;
mod model;
mod params;
mod train;

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use config::{BlockShape, ModelConfig, ShapeFlow, TrainConfig, N_CLASSES};
pub use io::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use loss::{softmax, softmax_cross_entropy};
pub use model::{
    backward, forward, forward_one, update_running_stats, Batch, Cache, Dropout, DropoutMasks, ForwardOutput,
    Mode, BN_EPSILON,
};
pub use params::{ConvLayer, DenseLayer, Gradients, ModelParams, TensorKind};
pub use train::{
    decide, evaluate_set, predict, train, EpochRecord, TrainHistory, TrainingSet, ValidationRecord,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape flow collapses to zero length at conv block {block}")]
    ShapeCollapse { block: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("stale cache: {0}")]
    StaleCache(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("model format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model size mismatch: {0}")]
    SizeMismatch(String),
    #[error("i/o error: {0}")]
    Io(String),
}
