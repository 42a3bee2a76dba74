use runtime::tape::{cosine, log_softmax_rows};
use runtime::Matrix;
use serde::{Deserialize, Serialize};

use crate::{InjectionError, LinearBridge};

/// Weights of the task, alignment and retention terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), InjectionError> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(InjectionError::Config(format!(
                    "loss weight {name} = {w} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }

    pub fn total(&self, ce: f64, alg: f64, kl: f64) -> f64 {
        self.alpha * ce + self.beta * alg + self.gamma * kl
    }
}

/// Mean negative log-likelihood of `(row, class)` targets.
pub fn ce_loss(logits: &Matrix, targets: &[(usize, usize)]) -> Result<f64, InjectionError> {
    if targets.is_empty() {
        return Err(InjectionError::EmptySupervision);
    }
    let rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
    let logp = log_softmax_rows(&logits.select_rows(&rows));
    Ok(-targets.iter().enumerate().map(|(i, &(_, c))| logp[(i, c)]).sum::<f64>() / targets.len() as f64)
}

/// Mean over rows of KL(reference ‖ student).
pub fn kl_loss(student: &Matrix, reference: &Matrix) -> f64 {
    assert_eq!(student.shape(), reference.shape(), "kl shapes");
    let (ls, lr) = (log_softmax_rows(student), log_softmax_rows(reference));
    let total: f64 = lr
        .data
        .iter()
        .zip(&ls.data)
        .map(|(&r, &s)| if r.exp() > 0.0 { r.exp() * (r - s) } else { 0.0 })
        .sum();
    total / student.rows.max(1) as f64
}

/// Mean over compiled checkpoints `0..=k` and aligned positions of
/// `1 - cos(W h_student, h_compiled)`, for one sequence.
///
/// `student[j]` and `compiled[i]` are `positions × width` streams; `pairs`
/// holds (student position, compiled position). A zero-norm vector counts
/// as loss 1.
pub fn algorithm_loss(
    student: &[Matrix],
    compiled: &[Matrix],
    bridge: &LinearBridge,
    layer_map: &[usize],
    pairs: &[(usize, usize)],
) -> f64 {
    assert_eq!(
        layer_map.len(),
        compiled.len(),
        "one student checkpoint per compiled checkpoint"
    );
    let mut total = 0.0;
    let mut degenerate = 0;
    for (i, target) in compiled.iter().enumerate() {
        let h = &student[layer_map[i]];
        for &(s, t) in pairs {
            match cosine(&bridge.apply(i, h.row(s)), target.row(t)) {
                Some(c) => total += 1.0 - c,
                None => {
                    total += 1.0;
                    degenerate += 1;
                }
            }
        }
    }
    if degenerate > 0 {
        log::warn!("cosine undefined for {degenerate} zero-norm vector(s); counted as loss 1");
    }
    total / (compiled.len() * pairs.len()).max(1) as f64
}

/// Batch roll of the component outside the projector's range: block `b`
/// of `h` (rows `b·len..(b+1)·len`) becomes
/// `(h[b-1] - P h[b-1]) + P h[b]`, cyclically.
pub fn roll_intervention(h: &Matrix, projector: &Matrix, batch: usize) -> Matrix {
    assert!(
        batch >= 1 && h.rows.is_multiple_of(batch),
        "rows not divisible by batch"
    );
    if batch == 1 {
        return h.clone();
    }
    let len = h.rows / batch;
    let proj = h.matmul_nt(projector);
    let mut out = h.clone();
    for b in 0..batch {
        let prev = (b + batch - 1) % batch;
        for i in 0..len {
            let (src, dst) = (prev * len + i, b * len + i);
            for c in 0..h.cols {
                out[(dst, c)] = (h[(src, c)] - proj[(src, c)]) + proj[(dst, c)];
            }
        }
    }
    out
}

/// Compiled checkpoint `i` read from student checkpoint `i`.
pub fn default_layer_map(compiled_layers: usize) -> Vec<usize> {
    (0..=compiled_layers).collect()
}

pub fn validate_layer_map(map: &[usize], compiled_layers: usize, student_layers: usize) -> Result<(), InjectionError> {
    if map.len() != compiled_layers + 1 {
        return Err(InjectionError::LayerMap(format!(
            "{} entries for {} compiled checkpoints",
            map.len(),
            compiled_layers + 1
        )));
    }
    if map.windows(2).any(|w| w[0] >= w[1]) {
        return Err(InjectionError::LayerMap(format!("{map:?} is not strictly increasing")));
    }
    if map.last().is_some_and(|&l| l > student_layers) {
        return Err(InjectionError::LayerMap(format!(
            "{map:?} reaches past the student's {student_layers} layers"
        )));
    }
    Ok(())
}
