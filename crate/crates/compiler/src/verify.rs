use rasp_core::{interpret_indices, Value};
use serde::{Deserialize, Serialize};

use crate::{CompileError, CompiledTransformer};

const MAX_REPORTED: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub tokens: Vec<String>,
    pub position: usize,
    pub variable: String,
    pub expected: Value,
    pub decoded: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableAgreement {
    pub variable: String,
    pub checked: usize,
    pub agreed: usize,
}

/// Agreement between compiled activations and the interpreter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub sequences: usize,
    pub variables: Vec<VariableAgreement>,
    /// Output-token agreement at every checked position.
    pub output_checked: usize,
    pub output_agreed: usize,
    /// Largest distance of a variable block from its exact one-hot vector.
    pub max_deviation: f64,
    /// First few disagreements.
    pub mismatches: Vec<Mismatch>,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
}

impl VerifyReport {
    fn new(compiled: &CompiledTransformer) -> Self {
        Self {
            sequences: 0,
            variables: compiled
                .basis
                .variables()
                .iter()
                .map(|v| VariableAgreement {
                    variable: v.clone(),
                    checked: 0,
                    agreed: 0,
                })
                .collect(),
            output_checked: 0,
            output_agreed: 0,
            max_deviation: 0.0,
            mismatches: Vec::new(),
            width: compiled.width(),
            layers: compiled.layers(),
            heads: compiled.model.layers.iter().map(|l| l.heads.len()).sum(),
        }
    }

    pub fn all_agree(&self) -> bool {
        self.variables.iter().all(|v| v.agreed == v.checked) && self.output_agreed == self.output_checked
    }

    pub fn agreement(&self, variable: &str) -> Option<f64> {
        self.variables
            .iter()
            .find(|v| v.variable == variable)
            .map(|v| v.agreed as f64 / v.checked.max(1) as f64)
    }
}

/// Per-variable block decoding at one residual vector.
struct Checker<'a> {
    compiled: &'a CompiledTransformer,
    /// (source, basis block range) per variable, in basis order.
    blocks: Vec<(Source, std::ops::Range<usize>)>,
    output_column: Vec<usize>,
}

impl<'a> Checker<'a> {
    fn new(compiled: &'a CompiledTransformer) -> Self {
        let blocks = compiled
            .basis
            .variables()
            .iter()
            .map(|v| {
                let source = match compiled.program.find(v) {
                    Some(id) => Source::Node(id),
                    // Token and position blocks exist even when unused.
                    None if v == "tokens" => Source::Token,
                    None => Source::Position,
                };
                (source, compiled.basis.block(v).unwrap())
            })
            .collect();
        let out = compiled.program.node(compiled.program.output);
        let output_column = out
            .domain
            .iter()
            .map(|v| {
                let dim = compiled.basis.dim(&out.name, v).unwrap();
                let col = compiled.model.unembedding.row(dim);
                col.iter().position(|&w| w == 1.0).unwrap()
            })
            .collect();
        Self {
            compiled,
            blocks,
            output_column,
        }
    }

    fn check(
        &self,
        report: &mut VerifyReport,
        tokens: &[usize],
        position: usize,
        expected: &[Vec<usize>],
        vector: &[f64],
        logits: &[f64],
    ) {
        let program = &self.compiled.program;
        for (slot, (source, range)) in self.blocks.iter().enumerate() {
            let block = &vector[range.clone()];
            let got = argmax(block);
            let want = match source {
                Source::Node(id) => expected[*id][position],
                Source::Token => tokens[position],
                Source::Position => position,
            };
            for (i, &x) in block.iter().enumerate() {
                let target = if i == want { 1.0 } else { 0.0 };
                report.max_deviation = report.max_deviation.max((x - target).abs());
            }
            let agg = &mut report.variables[slot];
            agg.checked += 1;
            if got == want {
                agg.agreed += 1;
            } else if report.mismatches.len() < MAX_REPORTED {
                let domain = self.compiled.basis.values(&agg.variable).unwrap();
                report.mismatches.push(Mismatch {
                    tokens: tokens.iter().map(|&t| program.vocabulary[t].clone()).collect(),
                    position,
                    variable: agg.variable.clone(),
                    expected: domain[want].clone(),
                    decoded: domain[got].clone(),
                });
            }
        }
        report.output_checked += 1;
        if argmax(logits) == self.output_column[expected[program.output][position]] {
            report.output_agreed += 1;
        }
    }
}

enum Source {
    Node(usize),
    Token,
    Position,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Runs the compiled model on each input and compares every variable at
/// every position of the final checkpoint with the interpreter.
pub fn verify<S: AsRef<str>>(compiled: &CompiledTransformer, inputs: &[Vec<S>]) -> Result<VerifyReport, CompileError> {
    let checker = Checker::new(compiled);
    let mut report = VerifyReport::new(compiled);
    let last = compiled.layers();
    for input in inputs {
        let tokens: Vec<&str> = input.iter().map(|s| s.as_ref()).collect();
        let ids = compiled.program.encode(&tokens)?;
        let expected = interpret_indices(&compiled.program, &ids);
        let run = compiled.forward(&tokens)?;
        for p in 0..ids.len() {
            checker.check(
                &mut report,
                &ids,
                p,
                &expected,
                run.trace.vector(last, p),
                run.logits.row(p),
            );
        }
        report.sequences += 1;
    }
    Ok(report)
}

/// Checks every sequence over `alphabet` of length 1 to `max_len`, each
/// followed by `suffix`. Causal programs are walked as a prefix tree with
/// an incremental session, so each prefix is computed once.
pub fn verify_exhaustive(
    compiled: &CompiledTransformer,
    alphabet: &[&str],
    max_len: usize,
    suffix: &[&str],
) -> Result<VerifyReport, CompileError> {
    let program = &compiled.program;
    if max_len + suffix.len() > program.max_seq_len {
        return Err(rasp_core::RaspError::TooLong {
            len: max_len + suffix.len(),
            max: program.max_seq_len,
        }
        .into());
    }
    let letters = program.encode(alphabet)?;
    let tail = program.encode(suffix)?;
    if !compiled.model.causal {
        let mut inputs = Vec::new();
        let mut stack: Vec<Vec<usize>> = vec![vec![]];
        while let Some(seq) = stack.pop() {
            if !seq.is_empty() {
                let full: Vec<&str> = seq
                    .iter()
                    .chain(&tail)
                    .map(|&t| program.vocabulary[t].as_str())
                    .collect();
                inputs.push(full);
            }
            if seq.len() < max_len {
                for &l in &letters {
                    let mut next = seq.clone();
                    next.push(l);
                    stack.push(next);
                }
            }
        }
        return verify(compiled, &inputs);
    }

    let checker = Checker::new(compiled);
    let mut report = VerifyReport::new(compiled);
    let last = compiled.layers();
    let mut session = compiled.model.session();
    session.push(0)?;
    let mut seq: Vec<usize> = Vec::new();
    // Depth-first over the prefix tree; each frame is the next letter to try.
    let mut frames: Vec<usize> = vec![0];
    while let Some(next) = frames.pop() {
        if next == letters.len() {
            if !seq.is_empty() {
                seq.pop();
                session.pop();
            }
            continue;
        }
        frames.push(next + 1);
        seq.push(letters[next]);
        session.push(letters[next] + 1)?;
        for &t in &tail {
            seq.push(t);
            session.push(t + 1)?;
        }
        let expected = interpret_indices(program, &seq);
        // Prefix positions were checked at shallower depths except the new
        // letter; suffix positions depend on the whole prefix.
        let first_new = seq.len() - tail.len() - 1;
        for p in first_new..seq.len() {
            checker.check(
                &mut report,
                &seq,
                p,
                &expected,
                session.vector(p + 1, last),
                &session.logits(p + 1),
            );
        }
        report.sequences += 1;
        for _ in &tail {
            seq.pop();
            session.pop();
        }
        if seq.len() < max_len {
            frames.push(0);
        } else {
            seq.pop();
            session.pop();
        }
    }
    Ok(report)
}
