//! A small RASP dialect: `tokens`, `indices`, `select`, `count`, `map`
//! and `zip_map`, with finite value domains and a reference interpreter.

mod interp;
pub mod json;
mod program;
mod value;

pub use interp::{interpret, interpret_indices, selector_matrix, Column, VariableTrace};
pub use program::{Node, NodeId, NodeKind, Program, ProgramBuilder};
pub use value::Value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RaspError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("duplicate node name {0:?}")]
    DuplicateName(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("{0:?} is a selector, expected an s-op")]
    NotAnSop(String),
    #[error("{0:?} is not a selector")]
    NotASelector(String),
    #[error("node {0:?} references a later node (cycle)")]
    Cycle(String),
    #[error("unknown token {token:?} at position {position}")]
    UnknownToken { token: String, position: usize },
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("malformed program document: {0}")]
    Json(String),
}
