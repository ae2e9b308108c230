//! A small dense/convolutional network engine with explicit gradients.
//!
//! Everything is 64-bit and single-threaded. A network is described by a
//! [`NetworkSpec`] and its weights live in a flat [`ParamVector`], which is
//! what the unlearning procedures clip, noise and update.

mod checkpoint;
mod network;
mod noise;
mod optim;
mod params;
mod spec;
mod tensor;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use network::{
    evaluate_accuracy, for_each_example_grad, forward, loss, loss_and_grad, predict,
    softmax_cross_entropy, Batch,
};
pub use noise::{add_gaussian_noise, gaussian_noise};
pub use optim::{epoch_order, one_cycle_lr, sgd_step, sgd_step_in_place, LrSchedule, TrainConfig};
pub use params::{
    clip_by_norm, clip_in_place, l2_norm, FlatVector, Gradient, Layout, LayoutEntry, ParamVector,
};
pub use spec::{Init, Layer, NetworkSpec};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
