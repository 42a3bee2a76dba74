use std::collections::BTreeMap;

use rasp_core::{NodeId, NodeKind, Program, Value};
use runtime::{AttentionHead, Matrix, Mlp, PlainLayer, PlainTransformer};
use serde::{Deserialize, Serialize};

use crate::basis::allocate_basis;
use crate::{CompileError, CompiledTransformer, FORMAT_VERSION, NONE_TOKEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sublayer {
    Attention,
    FeedForward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub variable: String,
    /// 1-based layer index.
    pub layer: usize,
    pub sublayers: Vec<Sublayer>,
}

/// Layer placement of every computed s-op.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSchedule {
    pub entries: Vec<ScheduleEntry>,
    pub layers: usize,
}

impl LayerSchedule {
    pub fn layer_of(&self, variable: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.variable == variable).map(|e| e.layer)
    }
}

/// Places each s-op one layer after its latest input. Sources live in the
/// embedding (checkpoint 0); a count uses the attention sublayer and the
/// feed-forward sublayer of its layer, maps use the feed-forward sublayer.
pub fn schedule(program: &Program) -> LayerSchedule {
    let mut ready = vec![0usize; program.nodes.len()];
    let mut entries = Vec::new();
    for (id, node) in program.nodes.iter().enumerate() {
        let inputs_ready = node.kind.inputs().iter().map(|&i| ready[i]).max().unwrap_or(0);
        ready[id] = match node.kind {
            NodeKind::Tokens | NodeKind::Indices => 0,
            NodeKind::Select { .. } => inputs_ready,
            NodeKind::Count { .. } | NodeKind::Map { .. } | NodeKind::ZipMap { .. } => inputs_ready + 1,
        };
        let sublayers = match node.kind {
            NodeKind::Count { .. } => vec![Sublayer::Attention, Sublayer::FeedForward],
            NodeKind::Map { .. } | NodeKind::ZipMap { .. } => vec![Sublayer::FeedForward],
            _ => continue,
        };
        entries.push(ScheduleEntry {
            variable: node.name.clone(),
            layer: ready[id],
            sublayers,
        });
    }
    let layers = entries.iter().map(|e| e.layer).max().unwrap_or(0);
    LayerSchedule { entries, layers }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompileOptions {
    pub causal: bool,
    pub selector_sharpness: f64,
    /// Answer token for each value of the output variable. Values not
    /// listed render as their display string.
    pub output_tokens: BTreeMap<Value, String>,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            causal: true,
            selector_sharpness: 100.0,
            output_tokens: BTreeMap::new(),
        }
    }
}

type SparseRow = Vec<(usize, f64)>;

/// Sparse accumulation of one layer's hidden units before densifying.
struct MlpBuilder {
    width: usize,
    /// (input dim, weight) per hidden unit, plus bias and outputs.
    units: Vec<(SparseRow, f64, SparseRow)>,
}

impl MlpBuilder {
    fn new(width: usize) -> Self {
        Self {
            width,
            units: Vec::new(),
        }
    }

    fn unit(&mut self, inputs: Vec<(usize, f64)>, bias: f64, outputs: Vec<(usize, f64)>) {
        self.units.push((inputs, bias, outputs));
    }

    fn build(self) -> Option<Mlp> {
        if self.units.is_empty() {
            return None;
        }
        let h = self.units.len();
        let mut w_in = Matrix::zeros(self.width, h);
        let mut b_in = Matrix::zeros(1, h);
        let mut w_out = Matrix::zeros(h, self.width);
        for (j, (ins, bias, outs)) in self.units.into_iter().enumerate() {
            for (d, w) in ins {
                w_in[(d, j)] += w;
            }
            b_in.data[j] = bias;
            for (d, w) in outs {
                w_out[(j, d)] += w;
            }
        }
        Some(Mlp {
            w_in,
            b_in,
            w_out,
            b_out: Matrix::zeros(1, self.width),
        })
    }
}

/// Compiles a validated program into a normalization-free transformer.
pub fn compile(program: &Program, options: &CompileOptions) -> Result<CompiledTransformer, CompileError> {
    program.validate()?;
    for node in &program.nodes {
        let reserved = match node.kind {
            NodeKind::Tokens => node.name != "tokens",
            NodeKind::Indices => node.name != "indices",
            _ => node.name == "tokens" || node.name == "indices" || node.name.starts_with('<'),
        };
        if reserved {
            return Err(CompileError::ReservedName(node.name.clone()));
        }
    }
    let n = program.max_seq_len;
    let sharp = options.selector_sharpness;
    // Unselected keys leak weight exp(-S) each; the count thresholds leave
    // a relative margin of 1/(2(n+1)(n+2)) which that leak must not eat.
    let leak = n as f64 * (-sharp).exp();
    let margin = 1.0 / (4.0 * (n as f64 + 1.0) * (n as f64 + 2.0));
    if sharp.is_nan() || sharp <= 0.0 || leak >= margin * 1e-3 {
        return Err(CompileError::Sharpness {
            sharpness: sharp,
            max_seq_len: n,
        });
    }

    let basis = allocate_basis(program);
    let sched = schedule(program);
    let d = basis.width();
    let ctx = n + 1;
    let one = basis.one();
    let bos = basis.bos();

    // Embeddings: BOS sets {one, bos}; every real token sets {one, tokens=t};
    // position p+1 sets indices=p.
    let vocab = program.full_vocabulary();
    let mut tok = Matrix::zeros(vocab.len(), d);
    tok[(0, one)] = 1.0;
    tok[(0, bos)] = 1.0;
    for (i, t) in program.vocabulary.iter().enumerate() {
        tok[(i + 1, one)] = 1.0;
        tok[(i + 1, basis.dim("tokens", &Value::sym(t)).unwrap())] = 1.0;
    }
    let mut pos = Matrix::zeros(ctx, d);
    for p in 0..n {
        pos[(p + 1, basis.dim("indices", &Value::from(p)).unwrap())] = 1.0;
    }

    // Gate constants for the count discretization.
    let big_l = 4.0 * (n as f64 + 1.0) * (n as f64 + 2.0);
    let gate = 2.0 * big_l + 10.0;

    let mut layers: Vec<(Vec<AttentionHead>, MlpBuilder)> =
        (0..sched.layers).map(|_| (Vec::new(), MlpBuilder::new(d))).collect();
    let layer_of: BTreeMap<&str, usize> = sched.entries.iter().map(|e| (e.variable.as_str(), e.layer)).collect();
    let dims_of = |id: NodeId| -> Vec<usize> {
        let node = &program.nodes[id];
        node.domain
            .iter()
            .map(|v| basis.dim(&node.name, v).expect("allocated"))
            .collect()
    };

    for node in program.nodes.iter() {
        let (attn, mlp) = match layer_of.get(node.name.as_str()) {
            Some(&l) => {
                let slot = &mut layers[l - 1];
                (&mut slot.0, &mut slot.1)
            }
            None => continue,
        };
        let out_dims: Vec<usize> = node
            .domain
            .iter()
            .map(|v| basis.dim(&node.name, v).expect("allocated"))
            .collect();
        match &node.kind {
            NodeKind::Map { input, table } => {
                for (a, &da) in dims_of(*input).iter().enumerate() {
                    mlp.unit(vec![(da, 1.0), (bos, -gate)], 0.0, vec![(out_dims[table[a]], 1.0)]);
                }
            }
            NodeKind::ZipMap { x, y, table } => {
                let (xd, yd) = (dims_of(*x), dims_of(*y));
                for (a, &da) in xd.iter().enumerate() {
                    for (b, &db) in yd.iter().enumerate() {
                        let o = out_dims[table[a * yd.len() + b]];
                        mlp.unit(vec![(da, 1.0), (db, 1.0), (bos, -gate)], -1.0, vec![(o, 1.0)]);
                    }
                }
            }
            NodeKind::Count { selector } => {
                let NodeKind::Select { keys, queries, table } = &program.nodes[*selector].kind else {
                    unreachable!("validated");
                };
                let (kd, qd) = (dims_of(*keys), dims_of(*queries));
                let nq = qd.len();
                let mut w_q = Matrix::zeros(d, nq + 1);
                let mut w_k = Matrix::zeros(d, nq + 1);
                for (j, &dq) in qd.iter().enumerate() {
                    w_q[(dq, j)] = sharp;
                }
                for (i, &dk) in kd.iter().enumerate() {
                    for j in 0..nq {
                        if table[i * nq + j] {
                            w_k[(dk, j)] = 1.0;
                        }
                    }
                }
                w_q[(one, nq)] = sharp;
                w_k[(bos, nq)] = 1.0;
                let scratch = basis.scratch(&node.name).expect("scratch allocated");
                let mut w_v = Matrix::zeros(d, 1);
                w_v[(bos, 0)] = 1.0;
                let mut w_o = Matrix::zeros(1, d);
                w_o[(0, scratch)] = 1.0;
                attn.push(AttentionHead { w_q, w_k, w_v, w_o });

                // The scratch value is 1/(c+1). step_c = [c' <= c] via a
                // clamped ramp at the midpoint between 1/(c+1) and 1/(c+2).
                for c in 0..=n {
                    let cf = c as f64;
                    let t = if c < n {
                        0.5 * (1.0 / (cf + 1.0) + 1.0 / (cf + 2.0))
                    } else {
                        0.5 / (cf + 1.0)
                    };
                    let mut up = vec![(out_dims[c], 1.0)];
                    let mut down = vec![(out_dims[c], -1.0)];
                    if c < n {
                        up.push((out_dims[c + 1], -1.0));
                        down.push((out_dims[c + 1], 1.0));
                    }
                    let ins = vec![(scratch, big_l), (bos, -gate)];
                    mlp.unit(ins.clone(), -big_l * t + 1.0, up);
                    mlp.unit(ins, -big_l * t, down);
                }
            }
            _ => {}
        }
    }

    let plain_layers = layers
        .into_iter()
        .map(|(heads, mlp)| PlainLayer {
            heads,
            mlp: mlp.build(),
        })
        .collect();

    let out_node = &program.nodes[program.output];
    let token_for = |v: &Value| -> String {
        match options.output_tokens.get(v) {
            Some(t) => t.clone(),
            None if v.is_null() => NONE_TOKEN.to_string(),
            None => v.to_string(),
        }
    };
    let mut output_vocabulary: Vec<String> = out_node.domain.iter().map(token_for).collect();
    output_vocabulary.sort();
    output_vocabulary.dedup();
    let mut unembed = Matrix::zeros(d, output_vocabulary.len());
    for v in &out_node.domain {
        let col = output_vocabulary.iter().position(|t| *t == token_for(v)).unwrap();
        unembed[(basis.dim(&out_node.name, v).unwrap(), col)] = 1.0;
    }

    Ok(CompiledTransformer {
        version: FORMAT_VERSION,
        architecture: "compiled".to_string(),
        program: program.clone(),
        output_variable: out_node.name.clone(),
        output_vocabulary,
        selector_sharpness: sharp,
        basis,
        schedule: sched,
        model: PlainTransformer::new(tok, pos, plain_layers, unembed, options.causal),
    })
}
