//! Dense `f64` matrices with reverse-mode differentiation, the neural
//! layers built on them, an Adam optimizer and a checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use gradcheck::{grad_check, relative_error, GradCheck};
pub use layers::{check_mask, AttentionOutput, CharCnn, FeedForward, LayerNorm, Linear, MultiHeadAttention, CHAR_PAD};
pub use optim::{clip_global_norm, global_norm, Adam};
pub use params::{embedding, xavier, ParamId, ParamStore};
pub use tape::{Gradients, Mask, Tape, Var, LN_EPS};

pub use ndarray::{self, Array2};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum NumericError {
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("attention row {0} has no attendable position")]
    FullyMaskedRow(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint is missing parameter {0}")]
    MissingParameter(String),
    #[error("checkpoint has unknown parameter {0}")]
    UnknownParameter(String),
}
