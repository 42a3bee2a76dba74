use serde::{Deserialize, Serialize};

use crate::Matrix;

/// Residual-stream activations of one sequence: `residual[i]` is the
/// `positions × width` stream after layer `i` (checkpoint 0 is the
/// embedding). The first `prefix` rows are internal positions (such as a
/// beginning-of-sequence marker) that precede the caller's tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationTrace {
    pub residual: Vec<Matrix>,
    #[serde(default)]
    pub prefix: usize,
}

impl ActivationTrace {
    pub fn checkpoints(&self) -> usize {
        self.residual.len()
    }

    /// Number of caller-visible positions.
    pub fn positions(&self) -> usize {
        self.residual.first().map_or(0, |m| m.rows - self.prefix)
    }

    pub fn width(&self) -> usize {
        self.residual.first().map_or(0, |m| m.cols)
    }

    /// Residual vector at a checkpoint for a caller-visible position.
    pub fn vector(&self, checkpoint: usize, position: usize) -> &[f64] {
        self.residual[checkpoint].row(self.prefix + position)
    }

    /// Caller-visible rows of one checkpoint.
    pub fn checkpoint(&self, checkpoint: usize) -> Matrix {
        let m = &self.residual[checkpoint];
        let rows: Vec<usize> = (self.prefix..m.rows).collect();
        m.select_rows(&rows)
    }
}
