//! Tensor-level reverse-mode autodiff over 2-D matrices.
//!
//! Every op records its inputs and whatever forward intermediates its
//! backward rule needs. Nodes created with `requires_grad = false`
//! (constants) never receive gradients and stop propagation.

use std::sync::Arc;

use crate::matrix::{gemm, gemm_raw, Matrix};

pub const MASK_VALUE: f64 = -1e9;
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

enum Op {
    Leaf,
    Add(Var, Var),
    AddConst(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMulNt {
        x: Var,
        w: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Vec<(usize, usize)>,
        probs: Vec<Matrix>,
    },
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Roll {
        x: Var,
        projector: Arc<Matrix>,
        batch: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize)>,
        probs: Matrix,
    },
    Kl {
        logits: Var,
        rows: Vec<usize>,
        student_probs: Matrix,
        reference_probs: Matrix,
    },
    Cosine {
        x: Var,
        target: Matrix,
    },
    WeightedSum(Vec<(Var, f64)>),
    DotConst {
        x: Var,
        c: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of the given shape when nothing flowed.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    for (o, x) in out.iter_mut().zip(row) {
        *o = x - lse;
    }
}

/// Row-wise softmax.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        log_softmax_row(m.row(r), out.row_mut(r));
        out.row_mut(r).iter_mut().for_each(|x| *x = x.exp());
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        log_softmax_row(m.row(r), out.row_mut(r));
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar");
        m.data[0]
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: &Matrix) -> Var {
        self.leaf(value.clone(), true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// `x + c` for a constant `c`; the gradient passes straight to `x`.
    pub fn add_const(&mut self, x: Var, c: &Matrix) -> Var {
        let mut out = self.value(x).clone();
        out.add_assign(c);
        let rg = self.rg(x);
        self.push(out, Op::AddConst(x), rg)
    }

    /// `x · w + b`, with `b` a `1 × n` row broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let mut out = self.value(x).matmul(self.value(w));
        if let Some(b) = b {
            let bias = self.value(b);
            assert_eq!(bias.shape(), (1, out.cols), "bias shape");
            for r in 0..out.rows {
                for (o, bb) in out.row_mut(r).iter_mut().zip(&bias.data) {
                    *o += bb;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Linear { x, w, b }, rg)
    }

    /// `x · wᵀ`.
    pub fn matmul_nt(&mut self, x: Var, w: Var) -> Var {
        let out = self.value(x).matmul_nt(self.value(w));
        let rg = self.rg(x) || self.rg(w);
        self.push(out, Op::MatMulNt { x, w }, rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!(g.shape(), (1, d));
        assert_eq!(b.shape(), (1, d));
        let mut xhat = Matrix::zeros(n, d);
        let mut out = Matrix::zeros(n, d);
        let mut rstd = Vec::with_capacity(n);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(rs);
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[(r, c)] = h;
                out[(r, c)] = h * g.data[c] + b.data[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = gelu(*v));
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Multi-head causal self-attention over independent row segments
    /// `(start, len)`. Scores are scaled by `1/sqrt(head_dim)` and future
    /// positions receive [`MASK_VALUE`] before the softmax.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, segments: &[(usize, usize)]) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let (t, d) = qm.shape();
        assert_eq!(km.shape(), (t, d));
        assert_eq!(vm.shape(), (t, d));
        assert_eq!(d % heads, 0, "width not divisible by heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(t, d);
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for &(start, len) in segments {
            assert!(start + len <= t, "segment out of range");
            for h in 0..heads {
                let off = start * d + h * dh;
                let mut s = Matrix::zeros(len, len);
                gemm_raw(
                    len,
                    dh,
                    len,
                    scale,
                    &qm.data[off..],
                    d,
                    1,
                    &km.data[off..],
                    1,
                    d,
                    0.0,
                    &mut s.data,
                    len,
                    1,
                );
                for i in 0..len {
                    let row = s.row_mut(i);
                    for x in row.iter_mut().skip(i + 1) {
                        *x += MASK_VALUE;
                    }
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - max).exp();
                        sum += *x;
                    }
                    row.iter_mut().for_each(|x| *x /= sum);
                }
                gemm_raw(
                    len,
                    len,
                    dh,
                    1.0,
                    &s.data,
                    len,
                    1,
                    &vm.data[off..],
                    d,
                    1,
                    0.0,
                    &mut out.data[off..],
                    d,
                    1,
                );
                probs.push(s);
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments: segments.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Row lookup: output row `r` is `table[ids[r]]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let out = t.select_rows(ids);
        let rg = self.rg(table);
        self.push(
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let out = self.value(x).select_rows(rows);
        let rg = self.rg(x);
        self.push(out, Op::GatherRows { x, rows: rows.to_vec() }, rg)
    }

    /// Batch-roll of the component orthogonal to the projector's range.
    ///
    /// `x` holds `batch` equally long blocks of rows. Block `b` becomes
    /// `(x[b-1] - x[b-1]·Pᵀ) + x[b]·Pᵀ` (cyclically). The rolled part is
    /// detached: gradients reach `x[b]` only through `x[b]·Pᵀ`.
    pub fn roll(&mut self, x: Var, projector: Arc<Matrix>, batch: usize) -> Var {
        let xv = self.value(x);
        let (t, d) = xv.shape();
        assert!(batch >= 1 && t % batch == 0, "rows not divisible by batch");
        assert_eq!(projector.shape(), (d, d), "projector shape");
        let out = if batch == 1 {
            xv.clone()
        } else {
            let len = t / batch;
            let proj = xv.matmul_nt(&projector);
            let mut out = Matrix::zeros(t, d);
            for b in 0..batch {
                let prev = (b + batch - 1) % batch;
                for i in 0..len {
                    let (src, dst) = ((prev * len + i) * d, (b * len + i) * d);
                    for c in 0..d {
                        out.data[dst + c] = (xv.data[src + c] - proj.data[src + c]) + proj.data[dst + c];
                    }
                }
            }
            out
        };
        let rg = self.rg(x);
        self.push(out, Op::Roll { x, projector, batch }, rg)
    }

    /// Mean negative log-likelihood over `(row, class)` targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Var {
        assert!(!targets.is_empty(), "cross entropy needs at least one target");
        let lv = self.value(logits);
        let rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
        let logp = log_softmax_rows(&lv.select_rows(&rows));
        let loss = -targets.iter().enumerate().map(|(i, &(_, c))| logp[(i, c)]).sum::<f64>() / targets.len() as f64;
        let mut probs = logp;
        probs.data.iter_mut().for_each(|x| *x = x.exp());
        let rg = self.rg(logits);
        self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Mean over `rows` of KL(reference ‖ student), where both are given
    /// as logits and `reference_logits` has one row per entry of `rows`.
    pub fn kl_div(&mut self, logits: Var, reference_logits: &Matrix, rows: &[usize]) -> Var {
        assert!(!rows.is_empty(), "kl needs at least one row");
        let lv = self.value(logits);
        assert_eq!(reference_logits.shape(), (rows.len(), lv.cols));
        let log_s = log_softmax_rows(&lv.select_rows(rows));
        let log_r = log_softmax_rows(reference_logits);
        let mut total = 0.0;
        for (pr, ps) in log_r.data.iter().zip(&log_s.data) {
            let p = pr.exp();
            if p > 0.0 {
                total += p * (pr - ps);
            }
        }
        let loss = total / rows.len() as f64;
        let mut student_probs = log_s;
        student_probs.data.iter_mut().for_each(|x| *x = x.exp());
        let mut reference_probs = log_r;
        reference_probs.data.iter_mut().for_each(|x| *x = x.exp());
        let rg = self.rg(logits);
        self.push(
            Matrix::scalar(loss),
            Op::Kl {
                logits,
                rows: rows.to_vec(),
                student_probs,
                reference_probs,
            },
            rg,
        )
    }

    /// Sum over rows of `1 - cos(x_r, target_r)`. A row where either
    /// vector has zero norm contributes 1 and no gradient.
    pub fn cosine_loss(&mut self, x: Var, target: Matrix) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape(), "cosine target shape");
        let mut total = 0.0;
        let mut degenerate = 0usize;
        for r in 0..xv.rows {
            match cosine(xv.row(r), target.row(r)) {
                Some(c) => total += 1.0 - c,
                None => {
                    total += 1.0;
                    degenerate += 1;
                }
            }
        }
        if degenerate > 0 {
            log::warn!("cosine undefined for {degenerate} zero-norm row(s); counted as loss 1");
        }
        let rg = self.rg(x);
        self.push(Matrix::scalar(total), Op::Cosine { x, target }, rg)
    }

    /// `Σ w_i · s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total = terms.iter().map(|&(v, w)| w * self.scalar(v)).sum();
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(Matrix::scalar(total), Op::WeightedSum(terms.to_vec()), rg)
    }

    /// `Σ x ⊙ c` for a constant `c` of the same shape.
    pub fn dot_const(&mut self, x: Var, c: Matrix) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), c.shape(), "dot_const shape");
        let s = xv.data.iter().zip(&c.data).map(|(a, b)| a * b).sum();
        let rg = self.rg(x);
        self.push(Matrix::scalar(s), Op::DotConst { x, c }, rg)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backward_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::AddConst(x) => {
                if self.rg(*x) {
                    accumulate(grads, *x, g.clone());
                }
            }
            Op::Linear { x, w, b } => {
                if self.rg(*x) {
                    accumulate(grads, *x, g.matmul_nt(self.value(*w)));
                }
                if self.rg(*w) {
                    accumulate(grads, *w, self.value(*x).matmul_tn(g));
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut gb = Matrix::zeros(1, g.cols);
                        for r in 0..g.rows {
                            for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        accumulate(grads, *b, gb);
                    }
                }
            }
            Op::MatMulNt { x, w } => {
                if self.rg(*x) {
                    accumulate(grads, *x, g.matmul(self.value(*w)));
                }
                if self.rg(*w) {
                    accumulate(grads, *w, g.matmul_tn(self.value(*x)));
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (n, d) = xhat.shape();
                let gm = self.value(*gamma);
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut gg = Matrix::zeros(1, d);
                    let mut gb = Matrix::zeros(1, d);
                    for r in 0..n {
                        for c in 0..d {
                            gg.data[c] += g[(r, c)] * xhat[(r, c)];
                            gb.data[c] += g[(r, c)];
                        }
                    }
                    if self.rg(*gamma) {
                        accumulate(grads, *gamma, gg);
                    }
                    if self.rg(*beta) {
                        accumulate(grads, *beta, gb);
                    }
                }
                if self.rg(*x) {
                    let mut gx = Matrix::zeros(n, d);
                    let mut dxhat = vec![0.0; d];
                    for r in 0..n {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..d {
                            dxhat[c] = g[(r, c)] * gm.data[c];
                            mean_d += dxhat[c];
                            mean_dx += dxhat[c] * xhat[(r, c)];
                        }
                        mean_d /= d as f64;
                        mean_dx /= d as f64;
                        for c in 0..d {
                            gx[(r, c)] = rstd[r] * (dxhat[c] - mean_d - xhat[(r, c)] * mean_dx);
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::Gelu(x) => {
                if self.rg(*x) {
                    let xv = self.value(*x);
                    let mut gx = g.clone();
                    for (o, xi) in gx.data.iter_mut().zip(&xv.data) {
                        *o *= gelu_grad(*xi);
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments,
                probs,
            } => {
                let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                let (t, d) = qm.shape();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = Matrix::zeros(t, d);
                let mut gk = Matrix::zeros(t, d);
                let mut gv = Matrix::zeros(t, d);
                let mut pi = 0;
                for &(start, len) in segments {
                    for h in 0..*heads {
                        let p = &probs[pi];
                        pi += 1;
                        let off = start * d + h * dh;
                        // dP = dO · Vᵀ
                        let mut dp = Matrix::zeros(len, len);
                        gemm_raw(
                            len,
                            dh,
                            len,
                            1.0,
                            &g.data[off..],
                            d,
                            1,
                            &vm.data[off..],
                            1,
                            d,
                            0.0,
                            &mut dp.data,
                            len,
                            1,
                        );
                        // dV = Pᵀ · dO
                        gemm_raw(
                            len,
                            len,
                            dh,
                            1.0,
                            &p.data,
                            1,
                            len,
                            &g.data[off..],
                            d,
                            1,
                            1.0,
                            &mut gv.data[off..],
                            d,
                            1,
                        );
                        // dS = P ⊙ (dP − rowsum(dP ⊙ P))
                        for i in 0..len {
                            let pr = p.row(i);
                            let dr = dp.row_mut(i);
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                            for (dv, pv) in dr.iter_mut().zip(pr) {
                                *dv = pv * (*dv - dot);
                            }
                        }
                        gemm_raw(
                            len,
                            len,
                            dh,
                            scale,
                            &dp.data,
                            len,
                            1,
                            &km.data[off..],
                            d,
                            1,
                            1.0,
                            &mut gq.data[off..],
                            d,
                            1,
                        );
                        gemm_raw(
                            len,
                            len,
                            dh,
                            scale,
                            &dp.data,
                            1,
                            len,
                            &qm.data[off..],
                            d,
                            1,
                            1.0,
                            &mut gk.data[off..],
                            d,
                            1,
                        );
                    }
                }
                if self.rg(*q) {
                    accumulate(grads, *q, gq);
                }
                if self.rg(*k) {
                    accumulate(grads, *k, gk);
                }
                if self.rg(*v) {
                    accumulate(grads, *v, gv);
                }
            }
            Op::Embed { table, ids } => {
                if self.rg(*table) {
                    let tv = self.value(*table);
                    let mut gt = Matrix::zeros(tv.rows, tv.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *table, gt);
                }
            }
            Op::GatherRows { x, rows } => {
                if self.rg(*x) {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    for (r, &src) in rows.iter().enumerate() {
                        for (o, v) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::Roll { x, projector, batch } => {
                if self.rg(*x) {
                    if *batch == 1 {
                        accumulate(grads, *x, g.clone());
                    } else {
                        let mut gx = Matrix::zeros(g.rows, g.cols);
                        gemm(1.0, g, false, projector, false, 0.0, &mut gx);
                        accumulate(grads, *x, gx);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if self.rg(*logits) {
                    let lv = self.value(*logits);
                    let s = g.data[0] / targets.len() as f64;
                    let mut gl = Matrix::zeros(lv.rows, lv.cols);
                    for (i, &(r, c)) in targets.iter().enumerate() {
                        for (o, p) in gl.row_mut(r).iter_mut().zip(probs.row(i)) {
                            *o += s * p;
                        }
                        gl[(r, c)] -= s;
                    }
                    accumulate(grads, *logits, gl);
                }
            }
            Op::Kl {
                logits,
                rows,
                student_probs,
                reference_probs,
            } => {
                if self.rg(*logits) {
                    let lv = self.value(*logits);
                    let s = g.data[0] / rows.len() as f64;
                    let mut gl = Matrix::zeros(lv.rows, lv.cols);
                    for (i, &r) in rows.iter().enumerate() {
                        let out = gl.row_mut(r);
                        for c in 0..out.len() {
                            out[c] += s * (student_probs[(i, c)] - reference_probs[(i, c)]);
                        }
                    }
                    accumulate(grads, *logits, gl);
                }
            }
            Op::Cosine { x, target } => {
                if self.rg(*x) {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        let (a, b) = (xv.row(r), target.row(r));
                        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if na == 0.0 || nb == 0.0 {
                            continue;
                        }
                        let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
                        for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = -g.data[0] * (b[j] / (na * nb) - c * a[j] / (na * na));
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::DotConst { x, c } => {
                if self.rg(*x) {
                    let mut gx = c.clone();
                    gx.scale(g.data[0]);
                    accumulate(grads, *x, gx);
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if self.rg(v) {
                        accumulate(grads, v, Matrix::scalar(w * g.data[0]));
                    }
                }
            }
        }
    }
}

/// Cosine similarity, `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}
