use data::{build_tokenizer, TextBatches};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use runtime::{clip_global_norm, Adam, Batch, Matrix, StudentConfig, StudentModel, Tape};
use serde::{Deserialize, Serialize};

use crate::{InjectionError, StudentCheckpoint, CHECKPOINT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub window: usize,
    pub seed: u64,
    pub vocab_size: usize,
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub context: usize,
    pub clip_norm: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let desk = StudentConfig::desk(data::VOCAB_SIZE);
        Self {
            steps: 2000,
            lr: 3e-4,
            batch: 12,
            window: 70,
            seed: 42,
            vocab_size: desk.vocab_size,
            layers: desk.layers,
            width: desk.width,
            heads: desk.heads,
            ff_width: desk.ff_width,
            context: desk.context,
            clip_norm: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub step: usize,
    pub loss: f64,
}

/// Next-token training on random corpus windows, from a fresh student
/// whose tokenizer is built from the same corpus.
pub fn pretrain_student(
    config: &PretrainConfig,
    corpus: &str,
    mut on_report: impl FnMut(&PretrainReport),
) -> Result<(StudentCheckpoint, Vec<PretrainReport>), InjectionError> {
    let tokenizer = build_tokenizer(corpus, config.vocab_size)?;
    let student_config = StudentConfig {
        vocab_size: tokenizer.len(),
        context: config.context,
        layers: config.layers,
        width: config.width,
        heads: config.heads,
        ff_width: config.ff_width,
    };
    if config.window > config.context {
        return Err(InjectionError::Config(format!(
            "window {} exceeds context {}",
            config.window, config.context
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut student = StudentModel::init(student_config, &mut rng);
    let mut text = TextBatches::new(
        &tokenizer,
        corpus,
        config.window,
        config.batch,
        config.seed.wrapping_add(1),
    )?;
    let shapes: Vec<(usize, usize)> = student.params().iter().map(|m| m.shape()).collect();
    let mut adam = Adam::new(&shapes);
    let lrs = vec![config.lr; shapes.len()];
    let mut reports = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let windows = text.next_batch();
        let loss = next_token_step(&mut student, &mut adam, &windows, &lrs, config.clip_norm)?;
        if !loss.is_finite() {
            return Err(InjectionError::Diverged { step, total: loss });
        }
        let r = PretrainReport { step, loss };
        on_report(&r);
        reports.push(r);
    }
    let ckpt = StudentCheckpoint {
        version: CHECKPOINT_VERSION,
        step: config.steps,
        tokenizer,
        student,
    };
    Ok((ckpt, reports))
}

fn next_token_step(
    student: &mut StudentModel,
    adam: &mut Adam,
    windows: &[Vec<usize>],
    lrs: &[f64],
    clip_norm: f64,
) -> Result<f64, InjectionError> {
    let batch = Batch::new(windows);
    let mut tape = Tape::new();
    let g = student.forward_tape(&mut tape, &batch, &mut |_, _, h| h)?;
    let targets: Vec<(usize, usize)> = windows
        .iter()
        .enumerate()
        .flat_map(|(b, w)| (0..w.len() - 1).map(move |p| (b, p, w[p + 1])))
        .map(|(b, p, t)| (batch.row(b, p), t))
        .collect();
    let loss = tape.cross_entropy(g.logits, &targets);
    let value = tape.scalar(loss);
    let grads = tape.backward(loss);
    let mut all: Vec<Matrix> = student
        .params()
        .iter()
        .enumerate()
        .map(|(j, m)| grads.get_or_zeros(g.params[j], m.rows, m.cols))
        .collect();
    clip_global_norm(&mut all, clip_norm);
    let mut params = student.params_mut();
    adam.update(&mut params, &all, lrs);
    Ok(value)
}
