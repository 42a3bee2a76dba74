//! Normalization-free transformer with raw (unscaled) attention logits and
//! ReLU feed-forward blocks: the architecture compiled programs target.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::tape::MASK_VALUE;
use crate::{ActivationTrace, Matrix, RuntimeError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w_in: Matrix,
    pub b_in: Matrix,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlainLayer {
    pub heads: Vec<AttentionHead>,
    pub mlp: Option<Mlp>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlainTransformer {
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<PlainLayer>,
    pub unembedding: Matrix,
    pub causal: bool,
    #[serde(skip)]
    sparse: OnceLock<SparseModel>,
}

impl PartialEq for PlainTransformer {
    fn eq(&self, o: &Self) -> bool {
        self.token_embedding == o.token_embedding
            && self.position_embedding == o.position_embedding
            && self.layers == o.layers
            && self.unembedding == o.unembedding
            && self.causal == o.causal
    }
}

/// Compressed sparse rows, used for `x · W` with a row vector `x`.
#[derive(Clone, Debug)]
struct Csr {
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn new(m: &Matrix) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for r in 0..m.rows {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            cols: m.cols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    /// `out += x · W`.
    fn vecmul_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.col_idx[e]] += xi * self.vals[e];
            }
        }
    }

    fn vecmul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.vecmul_into(x, &mut out);
        out
    }

    /// `x · W` reading only the listed nonzero entries of `x`.
    fn vecmul_nz(&self, x: &[f64], nz: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for &i in nz {
            let xi = x[i];
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.col_idx[e]] += xi * self.vals[e];
            }
        }
        out
    }
}

fn nonzeros(x: &[f64]) -> Vec<usize> {
    (0..x.len()).filter(|&i| x[i] != 0.0).collect()
}

#[derive(Clone, Debug)]
struct SparseHead {
    q: Csr,
    k: Csr,
    v: Csr,
    o: Csr,
}

#[derive(Clone, Debug)]
struct SparseMlp {
    w_in: Csr,
    b_in: Vec<f64>,
    w_out: Csr,
    b_out: Vec<f64>,
    /// Units with positive bias, which can fire on an all-zero input.
    biased: Vec<usize>,
}

#[derive(Clone, Debug)]
struct SparseLayer {
    heads: Vec<SparseHead>,
    mlp: Option<SparseMlp>,
}

#[derive(Clone, Debug)]
struct SparseModel {
    layers: Vec<SparseLayer>,
    unembed: Csr,
}

impl PlainTransformer {
    pub fn new(
        token_embedding: Matrix,
        position_embedding: Matrix,
        layers: Vec<PlainLayer>,
        unembedding: Matrix,
        causal: bool,
    ) -> Self {
        Self {
            token_embedding,
            position_embedding,
            layers,
            unembedding,
            causal,
            sparse: OnceLock::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.token_embedding.cols
    }

    pub fn context(&self) -> usize {
        self.position_embedding.rows
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embedding.rows
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    fn sparse(&self) -> &SparseModel {
        self.sparse.get_or_init(|| SparseModel {
            layers: self
                .layers
                .iter()
                .map(|l| SparseLayer {
                    heads: l
                        .heads
                        .iter()
                        .map(|h| SparseHead {
                            q: Csr::new(&h.w_q),
                            k: Csr::new(&h.w_k),
                            v: Csr::new(&h.w_v),
                            o: Csr::new(&h.w_o),
                        })
                        .collect(),
                    mlp: l.mlp.as_ref().map(|m| SparseMlp {
                        w_in: Csr::new(&m.w_in),
                        b_in: m.b_in.data.clone(),
                        w_out: Csr::new(&m.w_out),
                        b_out: m.b_out.data.clone(),
                        biased: (0..m.b_in.cols).filter(|&j| m.b_in.data[j] > 0.0).collect(),
                    }),
                })
                .collect(),
            unembed: Csr::new(&self.unembedding),
        })
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), RuntimeError> {
        if ids.len() > self.context() {
            return Err(RuntimeError::TooLong {
                len: ids.len(),
                context: self.context(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size()) {
            return Err(RuntimeError::BadTokenId {
                id: bad,
                vocab: self.vocab_size(),
            });
        }
        Ok(())
    }

    fn embed(&self, id: usize, pos: usize) -> Vec<f64> {
        self.token_embedding
            .row(id)
            .iter()
            .zip(self.position_embedding.row(pos))
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Runs the model; returns per-position logits and the full trace.
    pub fn forward(&self, ids: &[usize]) -> Result<(Matrix, ActivationTrace), RuntimeError> {
        self.check_ids(ids)?;
        let d = self.width();
        let mut x = Matrix::zeros(ids.len(), d);
        for (p, &id) in ids.iter().enumerate() {
            x.row_mut(p).copy_from_slice(&self.embed(id, p));
        }
        let mut residual = vec![x];
        for l in 0..self.layers.len() {
            let next = self.apply_layer(l, residual.last().unwrap());
            residual.push(next);
        }
        let logits = self.logits(residual.last().unwrap());
        Ok((logits, ActivationTrace { residual, prefix: 0 }))
    }

    /// Re-runs layers `checkpoint..` from a stored residual stream.
    pub fn forward_from(&self, trace: &ActivationTrace, checkpoint: usize) -> Matrix {
        let mut x = trace.residual[checkpoint].clone();
        for l in checkpoint..self.layers.len() {
            x = self.apply_layer(l, &x);
        }
        self.logits(&x)
    }

    pub fn logits(&self, x: &Matrix) -> Matrix {
        let sp = self.sparse();
        let mut out = Matrix::zeros(x.rows, self.unembedding.cols);
        for p in 0..x.rows {
            sp.unembed.vecmul_into(x.row(p), out.row_mut(p));
        }
        out
    }

    fn apply_layer(&self, l: usize, x: &Matrix) -> Matrix {
        let layer = &self.sparse().layers[l];
        let n = x.rows;
        let mut out = x.clone();
        for head in &layer.heads {
            let keys: Vec<Vec<f64>> = (0..n).map(|p| head.k.vecmul(x.row(p))).collect();
            let values: Vec<Vec<f64>> = (0..n).map(|p| head.v.vecmul(x.row(p))).collect();
            for p in 0..n {
                let q = head.q.vecmul(x.row(p));
                let visible = if self.causal { p + 1 } else { n };
                let mixed = attend(&q, &keys, &values, visible, n);
                head.o.vecmul_into(&mixed, out.row_mut(p));
            }
        }
        if let Some(mlp) = &layer.mlp {
            for p in 0..n {
                mlp_add(mlp, out.row_mut(p));
            }
        }
        out
    }

    /// Incremental causal session with cached keys and values.
    pub fn session(&self) -> PlainSession<'_> {
        assert!(self.causal, "incremental sessions need a causal model");
        let heads: Vec<usize> = self.layers.iter().map(|l| l.heads.len()).collect();
        PlainSession {
            model: self,
            keys: heads.iter().map(|&h| vec![Vec::new(); h]).collect(),
            values: heads.iter().map(|&h| vec![Vec::new(); h]).collect(),
            residual: Vec::new(),
        }
    }
}

fn attend(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], visible: usize, n: usize) -> Vec<f64> {
    let mut scores: Vec<f64> = (0..n)
        .map(|j| {
            let s: f64 = q.iter().zip(&keys[j]).map(|(a, b)| a * b).sum();
            if j < visible {
                s
            } else {
                s + MASK_VALUE
            }
        })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    let dv = values.first().map_or(0, |v| v.len());
    let mut mixed = vec![0.0; dv];
    for (j, s) in scores.iter().enumerate() {
        let w = s / sum;
        if w == 0.0 {
            continue;
        }
        for (m, v) in mixed.iter_mut().zip(&values[j]) {
            *m += w * v;
        }
    }
    mixed
}

thread_local! {
    static MLP_SCRATCH: std::cell::RefCell<(Vec<f64>, Vec<bool>, Vec<usize>)> =
        const { std::cell::RefCell::new((Vec::new(), Vec::new(), Vec::new())) };
}

/// `x += ReLU(x·W_in + b_in)·W_out + b_out`, visiting only hidden units
/// reachable from the nonzero inputs or with positive bias (all others
/// are inactive).
fn mlp_add(mlp: &SparseMlp, x: &mut [f64]) {
    MLP_SCRATCH.with(|cell| {
        let (acc, seen, touched) = &mut *cell.borrow_mut();
        let h = mlp.b_in.len();
        if acc.len() < h {
            acc.resize(h, 0.0);
            seen.resize(h, false);
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 || mlp.w_in.row_ptr[i] == mlp.w_in.row_ptr[i + 1] {
                continue;
            }
            let w = &mlp.w_in;
            for e in w.row_ptr[i]..w.row_ptr[i + 1] {
                let j = w.col_idx[e];
                acc[j] += xi * w.vals[e];
                if !seen[j] {
                    seen[j] = true;
                    touched.push(j);
                }
            }
        }
        touched.sort_unstable();
        let fire = |j: usize, pre: f64, x: &mut [f64]| {
            let a = pre + mlp.b_in[j];
            if a > 0.0 {
                let w = &mlp.w_out;
                for e in w.row_ptr[j]..w.row_ptr[j + 1] {
                    x[w.col_idx[e]] += a * w.vals[e];
                }
            }
        };
        // Units are applied in index order so results do not depend on
        // which inputs were nonzero.
        let mut bi = 0;
        for &j in touched.iter() {
            while bi < mlp.biased.len() && mlp.biased[bi] < j {
                fire(mlp.biased[bi], 0.0, x);
                bi += 1;
            }
            if bi < mlp.biased.len() && mlp.biased[bi] == j {
                bi += 1;
            }
            fire(j, acc[j], x);
        }
        for &j in &mlp.biased[bi..] {
            fire(j, 0.0, x);
        }
        for &j in touched.iter() {
            acc[j] = 0.0;
            seen[j] = false;
        }
        touched.clear();
        for (o, b) in x.iter_mut().zip(&mlp.b_out) {
            *o += b;
        }
    })
}

/// Position-by-position causal execution. Pushing a token computes only
/// the new position; popping discards it.
pub struct PlainSession<'a> {
    model: &'a PlainTransformer,
    keys: Vec<Vec<Vec<Vec<f64>>>>,
    values: Vec<Vec<Vec<Vec<f64>>>>,
    residual: Vec<Vec<Vec<f64>>>,
}

impl PlainSession<'_> {
    pub fn len(&self) -> usize {
        self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual.is_empty()
    }

    /// Appends a token; returns the new position's residual at every
    /// checkpoint.
    pub fn push(&mut self, id: usize) -> Result<&[Vec<f64>], RuntimeError> {
        let m = self.model;
        let pos = self.residual.len();
        if pos >= m.context() {
            return Err(RuntimeError::TooLong {
                len: pos + 1,
                context: m.context(),
            });
        }
        if id >= m.vocab_size() {
            return Err(RuntimeError::BadTokenId {
                id,
                vocab: m.vocab_size(),
            });
        }
        let sp = m.sparse();
        let mut x = m.embed(id, pos);
        let mut ckpts = vec![x.clone()];
        for (l, layer) in sp.layers.iter().enumerate() {
            let mut out = x.clone();
            let nz = nonzeros(&x);
            for (h, head) in layer.heads.iter().enumerate() {
                self.keys[l][h].push(head.k.vecmul_nz(&x, &nz));
                self.values[l][h].push(head.v.vecmul_nz(&x, &nz));
                let q = head.q.vecmul_nz(&x, &nz);
                let n = pos + 1;
                let mixed = attend(&q, &self.keys[l][h], &self.values[l][h], n, n);
                head.o.vecmul_into(&mixed, &mut out);
            }
            if let Some(mlp) = &layer.mlp {
                mlp_add(mlp, &mut out);
            }
            x = out;
            ckpts.push(x.clone());
        }
        self.residual.push(ckpts);
        Ok(self.residual.last().unwrap())
    }

    pub fn pop(&mut self) {
        if self.residual.pop().is_some() {
            for l in 0..self.keys.len() {
                for h in 0..self.keys[l].len() {
                    self.keys[l][h].pop();
                    self.values[l][h].pop();
                }
            }
        }
    }

    /// Residual of `position` at `checkpoint`.
    pub fn vector(&self, position: usize, checkpoint: usize) -> &[f64] {
        &self.residual[position][checkpoint]
    }

    pub fn logits(&self, position: usize) -> Vec<f64> {
        let x = self.residual[position].last().unwrap();
        self.model.sparse().unembed.vecmul(x)
    }
}
