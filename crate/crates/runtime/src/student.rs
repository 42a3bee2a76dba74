//! Pre-LayerNorm causal decoder used as the trainable student.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tape::{Tape, Var};
use crate::{ActivationTrace, Matrix, RuntimeError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub vocab_size: usize,
    pub context: usize,
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
}

impl StudentConfig {
    /// Desk-scale defaults: 6 layers, width 128, 4 heads.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            context: 320,
            layers: 6,
            width: 128,
            heads: 4,
            ff_width: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub w_q: Matrix,
    pub b_q: Matrix,
    pub w_k: Matrix,
    pub b_k: Matrix,
    pub w_v: Matrix,
    pub b_v: Matrix,
    pub w_o: Matrix,
    pub b_o: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
    pub w_ff_in: Matrix,
    pub b_ff_in: Matrix,
    pub w_ff_out: Matrix,
    pub b_ff_out: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub config: StudentConfig,
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub blocks: Vec<Block>,
    pub final_gain: Matrix,
    pub final_bias: Matrix,
    pub unembedding: Matrix,
}

/// Flattened rows of a batch of sequences; sequence `s` occupies rows
/// `segments[s].0 .. segments[s].0 + segments[s].1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub segments: Vec<(usize, usize)>,
}

impl Batch {
    pub fn new(seqs: &[Vec<usize>]) -> Self {
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        for s in seqs {
            segments.push((ids.len(), s.len()));
            ids.extend_from_slice(s);
            positions.extend(0..s.len());
        }
        Self {
            ids,
            positions,
            segments,
        }
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    /// Flat row of `(sequence, position)`.
    pub fn row(&self, seq: usize, pos: usize) -> usize {
        debug_assert!(pos < self.segments[seq].1);
        self.segments[seq].0 + pos
    }
}

/// Variables of one recorded student forward pass.
pub struct StudentGraph {
    pub params: Vec<Var>,
    /// Residual stream at checkpoints `0..=layers`, before any hook.
    pub checkpoints: Vec<Var>,
    pub logits: Var,
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Matrix {
    let dist = Normal::new(0.0, std).expect("valid std");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

fn ones(cols: usize) -> Matrix {
    Matrix::from_vec(1, cols, vec![1.0; cols])
}

impl Block {
    fn params(&self) -> [&Matrix; 16] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w_q,
            &self.b_q,
            &self.w_k,
            &self.b_k,
            &self.w_v,
            &self.b_v,
            &self.w_o,
            &self.b_o,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w_ff_in,
            &self.b_ff_in,
            &self.w_ff_out,
            &self.b_ff_out,
        ]
    }

    fn params_mut(&mut self) -> [&mut Matrix; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.b_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w_ff_in,
            &mut self.b_ff_in,
            &mut self.w_ff_out,
            &mut self.b_ff_out,
        ]
    }
}

impl StudentModel {
    /// Normal(0, 0.02) weights, unit LayerNorm gains, zero biases.
    pub fn init(config: StudentConfig, rng: &mut impl Rng) -> Self {
        assert_eq!(config.width % config.heads, 0, "width must divide into heads");
        let (d, f) = (config.width, config.ff_width);
        let std = 0.02;
        let blocks = (0..config.layers)
            .map(|_| Block {
                ln1_gain: ones(d),
                ln1_bias: Matrix::zeros(1, d),
                w_q: normal_matrix(d, d, std, rng),
                b_q: Matrix::zeros(1, d),
                w_k: normal_matrix(d, d, std, rng),
                b_k: Matrix::zeros(1, d),
                w_v: normal_matrix(d, d, std, rng),
                b_v: Matrix::zeros(1, d),
                w_o: normal_matrix(d, d, std, rng),
                b_o: Matrix::zeros(1, d),
                ln2_gain: ones(d),
                ln2_bias: Matrix::zeros(1, d),
                w_ff_in: normal_matrix(d, f, std, rng),
                b_ff_in: Matrix::zeros(1, f),
                w_ff_out: normal_matrix(f, d, std, rng),
                b_ff_out: Matrix::zeros(1, d),
            })
            .collect();
        Self {
            token_embedding: normal_matrix(config.vocab_size, d, std, rng),
            position_embedding: normal_matrix(config.context, d, std, rng),
            blocks,
            final_gain: ones(d),
            final_bias: Matrix::zeros(1, d),
            unembedding: normal_matrix(d, config.vocab_size, std, rng),
            config,
        }
    }

    /// All parameters in a fixed order (the order optimizer state uses).
    pub fn params(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.token_embedding, &self.position_embedding];
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend([&self.final_gain, &self.final_bias, &self.unembedding]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.token_embedding, &mut self.position_embedding];
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend([&mut self.final_gain, &mut self.final_bias, &mut self.unembedding]);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|m| m.data.len()).sum()
    }

    pub fn check_batch(&self, batch: &Batch) -> Result<(), RuntimeError> {
        if let Some(&(_, len)) = batch.segments.iter().find(|s| s.1 > self.config.context) {
            return Err(RuntimeError::TooLong {
                len,
                context: self.config.context,
            });
        }
        if let Some(&id) = batch.ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(RuntimeError::BadTokenId {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Records a forward pass. `hook(tape, i, h)` sees the residual at
    /// checkpoint `i` and returns the stream the remaining layers read.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        hook: &mut dyn FnMut(&mut Tape, usize, Var) -> Var,
    ) -> Result<StudentGraph, RuntimeError> {
        self.check_batch(batch)?;
        let params: Vec<Var> = self.params().into_iter().map(|m| tape.param(m)).collect();
        let tok = tape.embed(params[0], &batch.ids);
        let pos = tape.embed(params[1], &batch.positions);
        let x0 = tape.add(tok, pos);
        let mut checkpoints = vec![x0];
        let mut x = hook(tape, 0, x0);
        for l in 0..self.config.layers {
            x = self.block_tape(tape, &params, l, x, batch);
            checkpoints.push(x);
            x = hook(tape, l + 1, x);
        }
        let logits = self.head_tape(tape, &params, x);
        Ok(StudentGraph {
            params,
            checkpoints,
            logits,
        })
    }

    fn block_tape(&self, tape: &mut Tape, p: &[Var], l: usize, x: Var, batch: &Batch) -> Var {
        let b = 2 + 16 * l;
        let h = tape.layer_norm(x, p[b], p[b + 1]);
        let q = tape.linear(h, p[b + 2], Some(p[b + 3]));
        let k = tape.linear(h, p[b + 4], Some(p[b + 5]));
        let v = tape.linear(h, p[b + 6], Some(p[b + 7]));
        let a = tape.attention(q, k, v, self.config.heads, &batch.segments);
        let o = tape.linear(a, p[b + 8], Some(p[b + 9]));
        let x = tape.add(x, o);
        let h2 = tape.layer_norm(x, p[b + 10], p[b + 11]);
        let f = tape.linear(h2, p[b + 12], Some(p[b + 13]));
        let f = tape.gelu(f);
        let f = tape.linear(f, p[b + 14], Some(p[b + 15]));
        tape.add(x, f)
    }

    fn head_tape(&self, tape: &mut Tape, p: &[Var], x: Var) -> Var {
        let n = p.len();
        let h = tape.layer_norm(x, p[n - 3], p[n - 2]);
        tape.linear(h, p[n - 1], None)
    }

    /// Inference over sequences: per-sequence logits and traces.
    pub fn forward(&self, seqs: &[Vec<usize>]) -> Result<(Vec<Matrix>, Vec<ActivationTrace>), RuntimeError> {
        let batch = Batch::new(seqs);
        let mut tape = Tape::new();
        let g = self.forward_tape(&mut tape, &batch, &mut |_, _, v| v)?;
        let logits = tape.value(g.logits);
        let mut out_logits = Vec::with_capacity(seqs.len());
        let mut traces = Vec::with_capacity(seqs.len());
        for &(start, len) in &batch.segments {
            let rows: Vec<usize> = (start..start + len).collect();
            out_logits.push(logits.select_rows(&rows));
            traces.push(ActivationTrace {
                residual: g
                    .checkpoints
                    .iter()
                    .map(|&c| tape.value(c).select_rows(&rows))
                    .collect(),
                prefix: 0,
            });
        }
        Ok((out_logits, traces))
    }

    /// Logits only, for many sequences, processed in chunks.
    pub fn logits(&self, seqs: &[Vec<usize>], chunk: usize) -> Result<Vec<Matrix>, RuntimeError> {
        let mut out = Vec::with_capacity(seqs.len());
        for part in seqs.chunks(chunk.max(1)) {
            let batch = Batch::new(part);
            let mut tape = Tape::new();
            let g = self.forward_tape(&mut tape, &batch, &mut |_, _, v| v)?;
            let logits = tape.value(g.logits);
            for &(start, len) in &batch.segments {
                let rows: Vec<usize> = (start..start + len).collect();
                out.push(logits.select_rows(&rows));
            }
        }
        Ok(out)
    }

    /// Re-runs layers `checkpoint..` of a single-sequence trace.
    pub fn forward_from(&self, trace: &ActivationTrace, checkpoint: usize) -> Matrix {
        let x0 = &trace.residual[checkpoint];
        let batch = Batch {
            ids: vec![0; x0.rows],
            positions: (0..x0.rows).collect(),
            segments: vec![(0, x0.rows)],
        };
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params().into_iter().map(|m| tape.param(m)).collect();
        let mut x = tape.constant(x0.clone());
        for l in checkpoint..self.config.layers {
            x = self.block_tape(&mut tape, &params, l, x, &batch);
        }
        let logits = self.head_tape(&mut tape, &params, x);
        tape.value(logits).clone()
    }
}
