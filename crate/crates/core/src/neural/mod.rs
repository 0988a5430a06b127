//! Dense vectors with tape-based reverse-mode gradients, a recurrent gate
//! cell, Adam and named-tensor checkpoints.

mod gradcheck;
mod ops;
mod params;
mod tape;

use thiserror::Error;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use ops::{affine, bilinear_scores, concat_affine, lstm_step, softmax, softmax_xent, LstmParams, LstmState};
pub use params::{AdamConfig, Gradients, ParamEntry, ParamId, ParamStore, Tensor};
pub use tape::{Tape, Var};

/// Initialization range for every trainable tensor.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("{op}: expected size {expected}, found {found}")]
    ShapeMismatch { op: &'static str, expected: usize, found: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
