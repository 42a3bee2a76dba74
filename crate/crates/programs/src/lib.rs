//! The three task programs, the student tokenizer and the mapping between
//! student prompts and teacher sequences.

mod count;
mod dyck;
mod sum;
mod task;
mod tokenizer;

pub use count::{count_program, COUNT_MAX_SEQ_LEN};
pub use dyck::{is_shuffle_dyck, parse_pairs, shuffle_dyck_program, DYCK_MAX_SEQ_LEN};
pub use sum::{integer_sum_program, SUM_MAX_SEQ_LEN};
pub use task::{
    build_count, build_integer_sum, build_shuffle_dyck, Encoded, StudentInput, Task, TaskSpec, DYCK_FAMILIES,
};
pub use tokenizer::{scan, StudentTokenizer, Token};

use rasp_core::RaspError;

/// Teacher marker placed at the last prompt position.
pub const COMPUTE: &str = "compute";
pub const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error(transparent)]
    Program(#[from] RaspError),
    #[error("invalid parenthesis family {0:?}")]
    BadFamily(String),
    #[error("character {ch:?} at byte {position} cannot be rendered")]
    Unrenderable { ch: char, position: usize },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("malformed task input {0:?}")]
    BadInput(String),
    #[error("supervised position {0} has no teacher image")]
    Alignment(usize),
    #[error("task spec json: {0}")]
    Json(String),
}
