//! Minimal dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] records forward operations on [`Tensor`]s; [`Tape::backward`]
//! walks the record in reverse to produce [`Gradients`], which a
//! [`ParameterSet`] accumulates and applies with Adam.

mod params;
mod tape;
mod tensor;

pub use params::{AdamConfig, ParamId, ParameterSet, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{sigmoid, Activation, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value: {context}")]
    NonFinite { context: String },
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("all rows masked out of the loss")]
    EmptyMask,
    #[error("non-finite gradient for parameter {0}")]
    NanGradient(String),
    #[error("duplicate parameter name {0}")]
    DuplicateName(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}
