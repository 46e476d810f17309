//! Dense ReLU network trained from scratch with weighted cross-entropy and
//! plain mini-batch SGD.

mod loss;
mod mlp;
mod train;

pub use loss::{class_weights, softmax, weighted_cross_entropy, ClassWeights};
pub use mlp::{
    backward, forward_batch, grad_check, gradients, load_model, mlp_forward, mlp_init, mlp_init_with, mlp_predict,
    predict_batch, save_model, ForwardCache, Gradients, MlpModel, Mode, HIDDEN,
};
pub use train::{mlp_train, ClassWeightMode, Samples, TrainConfig, TrainHistory};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("expected input of length {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("all class counts are zero")]
    AllEmpty,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("class {class} out of range for {n_classes} classes")]
    BadTarget { class: usize, n_classes: usize },
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
