//! Execution of compiled and student transformers, activation capture,
//! and the autodiff tape used for training.

mod matrix;
mod optim;
mod plain;
mod student;
pub mod tape;
mod trace;

pub use matrix::{gemm, gemm_raw, Matrix};
pub use optim::{clip_global_norm, Adam};
pub use plain::{AttentionHead, Mlp, PlainLayer, PlainSession, PlainTransformer};
pub use student::{Batch, Block, StudentConfig, StudentGraph, StudentModel};
pub use tape::{Gradients, Tape, Var};
pub use trace::ActivationTrace;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("sequence of length {len} exceeds model context {context}")]
    TooLong { len: usize, context: usize },
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    BadTokenId { id: usize, vocab: usize },
}
