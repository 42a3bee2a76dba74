//! RASP-to-transformer compilation with a named one-hot residual basis.
//!
//! Counts compile to a head that attends to the selected positions and an
//! always-attended beginning-of-sequence marker; the marker's weight
//! `1/(c+1)` lands in a scratch dimension and a threshold feed-forward
//! block turns it into the one-hot count. Maps compile to lookup-table
//! feed-forward blocks. No layer normalization anywhere.

mod basis;
mod compile;
mod verify;

use std::path::Path;

use rasp_core::{Program, RaspError};
use runtime::{ActivationTrace, Matrix, PlainTransformer, RuntimeError};
use serde::{Deserialize, Serialize};

pub use basis::{allocate_basis, BasisEntry, ResidualBasis};
pub use compile::{compile, schedule, CompileOptions, LayerSchedule, ScheduleEntry, Sublayer};
pub use verify::{verify, verify_exhaustive, Mismatch, VariableAgreement, VerifyReport};

pub const FORMAT_VERSION: u32 = 1;
/// Output token for "no answer at this position".
pub const NONE_TOKEN: &str = "<none>";

#[derive(Debug, thiserror::Error)]
pub enum CompileError {
    #[error(transparent)]
    Program(#[from] RaspError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("node name {0:?} is reserved")]
    ReservedName(String),
    #[error("selector sharpness {sharpness} too low to resolve counts up to {max_seq_len}")]
    Sharpness { sharpness: f64, max_seq_len: usize },
    #[error("weight file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

mod program_serde {
    use rasp_core::{json, Program};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Program, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_some(&json::to_value(p))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Program, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        json::from_value(v).map_err(D::Error::custom)
    }
}

/// Compiled program: weights, basis, schedule and output vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompiledTransformer {
    pub version: u32,
    pub architecture: String,
    #[serde(with = "program_serde")]
    pub program: Program,
    pub output_variable: String,
    pub output_vocabulary: Vec<String>,
    pub selector_sharpness: f64,
    pub basis: ResidualBasis,
    pub schedule: LayerSchedule,
    pub model: PlainTransformer,
}

/// One compiled forward pass, with the internal marker position kept in
/// the trace as a prefix row.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledRun {
    /// Logits per input position (marker row dropped).
    pub logits: Matrix,
    pub trace: ActivationTrace,
}

impl CompiledTransformer {
    pub fn layers(&self) -> usize {
        self.model.layer_count()
    }

    pub fn width(&self) -> usize {
        self.basis.width()
    }

    /// Token ids with the beginning-of-sequence marker (id 0) prepended.
    pub fn encode(&self, tokens: &[&str]) -> Result<Vec<usize>, CompileError> {
        let ids = self.program.encode(tokens)?;
        Ok(std::iter::once(0).chain(ids.into_iter().map(|i| i + 1)).collect())
    }

    pub fn forward(&self, tokens: &[&str]) -> Result<CompiledRun, CompileError> {
        let ids = self.encode(tokens)?;
        let (logits, mut trace) = self.model.forward(&ids)?;
        trace.prefix = 1;
        let rows: Vec<usize> = (1..logits.rows).collect();
        Ok(CompiledRun {
            logits: logits.select_rows(&rows),
            trace,
        })
    }

    /// Decodes every program variable at every position of a checkpoint by
    /// block-wise argmax; entries are domain indices.
    pub fn decode_indices(&self, trace: &ActivationTrace, checkpoint: usize) -> Vec<Vec<usize>> {
        self.basis
            .variables()
            .iter()
            .map(|v| {
                (0..trace.positions())
                    .map(|p| self.basis.argmax(v, trace.vector(checkpoint, p)).unwrap())
                    .collect()
            })
            .collect()
    }

    /// Predicted output token per position.
    pub fn predict(&self, run: &CompiledRun) -> Vec<String> {
        (0..run.logits.rows)
            .map(|p| {
                let row = run.logits.row(p);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                self.output_vocabulary[best].clone()
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("compiled model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CompileError> {
        let c: Self = serde_json::from_str(s).map_err(|e| CompileError::Format(e.to_string()))?;
        if c.version != FORMAT_VERSION || c.architecture != "compiled" {
            return Err(CompileError::Format(format!(
                "expected compiled weights version {FORMAT_VERSION}, got {} v{}",
                c.architecture, c.version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), CompileError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CompileError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
