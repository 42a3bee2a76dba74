//! Accuracy under residual noise confined to the answer subspace versus a
//! random subspace of the same dimension.

use compiler::CompiledTransformer;
use data::Example;
use injection::{numerical_rank, row_space, InjectionCheckpoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use runtime::{Batch, Matrix, Tape};
use serde::{Deserialize, Serialize};

use crate::{all_targets_greedy, student_input, EvalError};

/// Number of log-spaced norms in the default grid.
pub const DEFAULT_NORM_COUNT: usize = 20;
pub const DEFAULT_TRIALS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Noise norms; when empty, [`default_norms`] of the mean residual norm.
    pub norms: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Compiled checkpoint whose student image receives the noise; `k`
    /// when absent.
    pub checkpoint: Option<usize>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            norms: Vec::new(),
            trials: DEFAULT_TRIALS,
            seed: 42,
            checkpoint: None,
        }
    }
}

/// Twenty norms log-spaced from `scale / 100` to `10 · scale`.
pub fn default_norms(scale: f64) -> Vec<f64> {
    let (lo, hi) = ((scale / 100.0).ln(), (10.0 * scale).ln());
    (0..DEFAULT_NORM_COUNT)
        .map(|i| (lo + (hi - lo) * i as f64 / (DEFAULT_NORM_COUNT - 1) as f64).exp())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub norm: f64,
    pub answer_accuracy: f64,
    pub random_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCurves {
    pub clean_accuracy: f64,
    pub subspace_dim: usize,
    pub student_layer: usize,
    /// Mean residual norm at the noised positions without noise.
    pub residual_norm: f64,
    pub trials: usize,
    pub examples: usize,
    pub seed: u64,
    pub points: Vec<NoisePoint>,
}

/// Orthonormal rows spanning the bridge rows of the output variable's
/// block at compiled checkpoint `checkpoint`.
pub fn answer_subspace(
    model: &InjectionCheckpoint,
    teacher: &CompiledTransformer,
    checkpoint: usize,
) -> Result<Matrix, EvalError> {
    let block = teacher
        .basis
        .block(&teacher.output_variable)
        .ok_or_else(|| EvalError::Config(format!("no basis block for {}", teacher.output_variable)))?;
    let rows: Vec<usize> = block.collect();
    Ok(row_space(&model.bridge.map(checkpoint).select_rows(&rows))?)
}

/// Orthonormal basis of a uniformly random `dim`-dimensional subspace.
pub fn random_subspace(dim: usize, width: usize, rng: &mut impl Rng) -> Result<Matrix, EvalError> {
    let data = (0..dim * width).map(|_| StandardNormal.sample(rng)).collect();
    let basis = row_space(&Matrix::from_vec(dim, width, data))?;
    debug_assert_eq!(numerical_rank(&basis), dim);
    Ok(basis)
}

/// A vector of norm `norm` in the span of `basis` with an isotropic
/// direction.
fn sample_in(basis: &Matrix, norm: f64, rng: &mut impl Rng) -> Vec<f64> {
    let coeffs: Vec<f64> = (0..basis.rows).map(|_| StandardNormal.sample(rng)).collect();
    let len = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    let mut v = vec![0.0; basis.cols];
    for (r, c) in coeffs.iter().enumerate() {
        for (x, b) in v.iter_mut().zip(basis.row(r)) {
            *x += c / len * norm * b;
        }
    }
    v
}

struct Prepared {
    batch: Batch,
    /// Batch rows that receive noise (the answer-predicting positions).
    noised: Vec<usize>,
    targets: Vec<Vec<(usize, usize)>>,
}

fn prepare(model: &InjectionCheckpoint, examples: &[Example]) -> Result<Prepared, EvalError> {
    let spec = model.task.spec()?;
    let inputs: Vec<_> = examples
        .iter()
        .filter_map(|e| student_input(&model.student, &model.tokenizer, &spec, e))
        .collect();
    if inputs.is_empty() {
        return Err(EvalError::Config("no example fits the student".into()));
    }
    let seqs: Vec<Vec<usize>> = inputs.iter().map(|i| i.0.clone()).collect();
    let batch = Batch::new(&seqs);
    let noised = inputs
        .iter()
        .zip(&batch.segments)
        .flat_map(|(i, &(start, _))| i.1.iter().map(move |t| start + t.0))
        .collect();
    Ok(Prepared {
        batch,
        noised,
        targets: inputs.into_iter().map(|i| i.1).collect(),
    })
}

/// Fraction of examples answered correctly with `noise` added to the
/// residual after student layer `layer`; also returns that residual.
fn noisy_accuracy(
    model: &InjectionCheckpoint,
    prepared: &Prepared,
    layer: usize,
    noise: Option<&Matrix>,
) -> Result<(f64, Matrix), EvalError> {
    let mut tape = Tape::new();
    let mut seen = None;
    let g = model
        .student
        .forward_tape(&mut tape, &prepared.batch, &mut |tape, i, v| {
            if i != layer {
                return v;
            }
            seen = Some(tape.value(v).clone());
            match noise {
                Some(n) => tape.add_const(v, n),
                None => v,
            }
        })?;
    let logits = tape.value(g.logits);
    let correct = prepared
        .batch
        .segments
        .iter()
        .zip(&prepared.targets)
        .filter(|(&(start, len), targets)| {
            let rows: Vec<usize> = (start..start + len).collect();
            all_targets_greedy(&logits.select_rows(&rows), targets)
        })
        .count();
    Ok((
        correct as f64 / prepared.targets.len() as f64,
        seen.expect("hooked layer"),
    ))
}

/// Mean accuracy over `trials` noise draws at each norm, for noise inside
/// the answer subspace and inside fresh random subspaces of equal
/// dimension. Every answer-predicting position gets an independent draw.
pub fn noise_causality(
    model: &InjectionCheckpoint,
    teacher: &CompiledTransformer,
    examples: &[Example],
    config: &NoiseConfig,
) -> Result<NoiseCurves, EvalError> {
    let checkpoint = config.checkpoint.unwrap_or(teacher.layers());
    if checkpoint > teacher.layers() || config.trials == 0 {
        return Err(EvalError::Config(format!(
            "checkpoint {checkpoint} of {} with {} trials",
            teacher.layers(),
            config.trials
        )));
    }
    let layer = model.layer_map[checkpoint];
    let answer = answer_subspace(model, teacher, checkpoint)?;
    let (dim, width) = answer.shape();
    let prepared = prepare(model, examples)?;
    let (clean, residual) = noisy_accuracy(model, &prepared, layer, None)?;
    let residual_norm = prepared
        .noised
        .iter()
        .map(|&r| residual.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum::<f64>()
        / prepared.noised.len() as f64;
    let norms = if config.norms.is_empty() {
        default_norms(residual_norm)
    } else {
        config.norms.clone()
    };
    let rows = prepared.batch.ids.len();
    let mut points = Vec::with_capacity(norms.len());
    for (ni, &norm) in norms.iter().enumerate() {
        let mut totals = [0.0; 2];
        for (kind, total) in totals.iter_mut().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream((ni * 2 + kind) as u64);
            for _ in 0..config.trials {
                let basis = if kind == 0 {
                    answer.clone()
                } else {
                    random_subspace(dim, width, &mut rng)?
                };
                let mut noise = Matrix::zeros(rows, width);
                for &r in &prepared.noised {
                    noise.row_mut(r).copy_from_slice(&sample_in(&basis, norm, &mut rng));
                }
                *total += noisy_accuracy(model, &prepared, layer, Some(&noise))?.0;
            }
        }
        points.push(NoisePoint {
            norm,
            answer_accuracy: totals[0] / config.trials as f64,
            random_accuracy: totals[1] / config.trials as f64,
        });
    }
    Ok(NoiseCurves {
        clean_accuracy: clean,
        subspace_dim: dim,
        student_layer: layer,
        residual_norm,
        trials: config.trials,
        examples: prepared.targets.len(),
        seed: config.seed,
        points,
    })
}
