//! From-scratch residual CNN with exact backpropagation, three
//! learning-rate groups, freezing and checkpoint persistence.
//!
//! Batch normalization in a frozen group always normalizes with its running
//! statistics and never updates them, so a frozen body is a fixed function
//! of its input in both modes.

mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod model;
mod optim;
mod scalar;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use layers::Act;
pub use model::{
    images_to_act, BasicBlock, Gradients, Mode, Model, ModelConfig, ParamGroup, Shortcut, TensorMut, TensorRef,
    HEAD_GROUP, NUM_GROUPS,
};
pub use optim::{sgd_update, Sgd};
pub use scalar::Scalar;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {actual:#010x})")]
    ChecksumMismatch { stored: u32, actual: u32 },
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("io: {0}")]
    Io(String),
}

/// Default momentum for the optimizer.
pub const SGD_MOMENTUM: f64 = 0.9;
