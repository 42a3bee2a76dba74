//! Distillation of a compiled program into a pre-trained student: the
//! three-part loss, the linear bridge, the subspace roll intervention and
//! the training loops.

mod bridge;
mod loss;
mod pretrain;
mod train;

use std::path::Path;

use programs::{StudentTokenizer, Task};
use runtime::StudentModel;
use serde::{Deserialize, Serialize};

pub use bridge::{numerical_rank, row_space, subspace_projector, LinearBridge};
pub use loss::{
    algorithm_loss, ce_loss, default_layer_map, kl_loss, roll_intervention, validate_layer_map, LossWeights,
};
pub use pretrain::{pretrain_student, PretrainConfig, PretrainReport};
pub use train::{LossReport, TrainConfig, Trainer, PAD_ID};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum InjectionError {
    #[error("bridge has numerical rank {rank}, expected {expected} (smallest singular value {smallest:e}, tolerance {tolerance:e})")]
    RankDeficient {
        rank: usize,
        expected: usize,
        smallest: f64,
        tolerance: f64,
    },
    #[error("compiled width {compiled} must be smaller than student width {student}")]
    Width { student: usize, compiled: usize },
    #[error("layer map: {0}")]
    LayerMap(String),
    #[error("no supervised positions")]
    EmptySupervision,
    #[error("loss diverged at step {step}: {total}")]
    Diverged { step: usize, total: f64 },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Task(#[from] programs::TaskError),
    #[error(transparent)]
    Compile(#[from] compiler::CompileError),
    #[error(transparent)]
    Runtime(#[from] runtime::RuntimeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn check_version(version: u32) -> Result<(), InjectionError> {
    if version != CHECKPOINT_VERSION {
        return Err(InjectionError::Format(format!(
            "version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    Ok(())
}

/// Injected (or baseline) student with its bridge and run settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionCheckpoint {
    pub version: u32,
    pub task: Task,
    pub step: usize,
    pub config: TrainConfig,
    pub layer_map: Vec<usize>,
    pub tokenizer: StudentTokenizer,
    pub student: StudentModel,
    pub bridge: LinearBridge,
}

/// Pre-trained student and its tokenizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentCheckpoint {
    pub version: u32,
    pub step: usize,
    pub tokenizer: StudentTokenizer,
    pub student: StudentModel,
}

macro_rules! json_file {
    ($t:ty) => {
        impl $t {
            pub fn save(&self, path: &Path) -> Result<(), InjectionError> {
                let tmp = path.with_extension("json.tmp");
                std::fs::write(&tmp, serde_json::to_string(self)?)?;
                std::fs::rename(&tmp, path)?;
                Ok(())
            }

            pub fn load(path: &Path) -> Result<Self, InjectionError> {
                let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                check_version(c.version)?;
                Ok(c)
            }
        }
    };
}

json_file!(InjectionCheckpoint);
json_file!(StudentCheckpoint);
