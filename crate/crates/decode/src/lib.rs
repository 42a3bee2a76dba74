//! Decoding compiled-program variables from student activations.
//!
//! A student vector `h` is mapped through the bridge to `W h`; each
//! variable's value is the argmax over its block of basis dimensions.

use std::io::Write;
use std::path::{Path, PathBuf};

use compiler::{CompileError, CompiledTransformer, ResidualBasis};
use data::Example;
use injection::InjectionCheckpoint;
use programs::TaskError;
use rasp_core::{interpret_indices, RaspError, Value};
use runtime::{Matrix, RuntimeError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(
        "bridge maps width {bridge_in} to {bridge_out}; activations have width {activations}, basis has width {basis}"
    )]
    Width {
        bridge_in: usize,
        bridge_out: usize,
        activations: usize,
        basis: usize,
    },
    #[error("checkpoint {checkpoint} out of range: the compiled model has {layers} layers")]
    Checkpoint { checkpoint: usize, layers: usize },
    #[error("malformed matrix file: {0}")]
    Parse(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Rasp(#[from] RaspError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Block index of each variable (basis order) for the given rows of
/// `vectors`, read through `map`.
pub fn decode_rows(
    vectors: &Matrix,
    rows: &[usize],
    map: &Matrix,
    basis: &ResidualBasis,
) -> Result<Vec<Vec<usize>>, DecodeError> {
    if map.cols != vectors.cols || map.rows != basis.width() {
        return Err(DecodeError::Width {
            bridge_in: map.cols,
            bridge_out: map.rows,
            activations: vectors.cols,
            basis: basis.width(),
        });
    }
    let mapped = vectors.select_rows(rows).matmul_nt(map);
    Ok((0..rows.len())
        .map(|r| {
            basis
                .variables()
                .iter()
                .map(|v| basis.argmax(v, mapped.row(r)).expect("basis variable"))
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub position: usize,
    pub token: String,
    pub values: Vec<Value>,
}

/// Decoded values, one row per aligned position and one column per
/// variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableTable {
    pub variables: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl VariableTable {
    pub fn column(&self, variable: &str) -> Option<Vec<Value>> {
        let c = self.variables.iter().position(|v| v == variable)?;
        Some(self.rows.iter().map(|r| r.values[c].clone()).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DecodeError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["position".to_string(), "token".to_string()];
        header.extend(self.variables.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut record = vec![r.position.to_string(), r.token.clone()];
            record.extend(r.values.iter().map(Value::to_string));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DecodeError> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn table_from_indices(
    basis: &ResidualBasis,
    positions: &[usize],
    labels: &[String],
    indices: &[Vec<usize>],
) -> VariableTable {
    let domains: Vec<Vec<Value>> = basis.variables().iter().map(|v| basis.values(v).unwrap()).collect();
    VariableTable {
        variables: basis.variables().to_vec(),
        rows: positions
            .iter()
            .zip(indices)
            .map(|(&p, idx)| TableRow {
                position: p,
                token: labels[p].clone(),
                values: idx.iter().zip(&domains).map(|(&i, d)| d[i].clone()).collect(),
            })
            .collect(),
    }
}

/// Decodes every aligned position of one activation matrix. `pairs` holds
/// (activation row, compiled position); `labels` names each activation
/// row. Unaligned rows are left out.
pub fn decode_variables(
    vectors: &Matrix,
    map: &Matrix,
    basis: &ResidualBasis,
    pairs: &[(usize, usize)],
    labels: &[String],
) -> Result<VariableTable, DecodeError> {
    let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let indices = decode_rows(vectors, &rows, map, basis)?;
    Ok(table_from_indices(basis, &rows, labels, &indices))
}

/// Interpreter values of every basis variable (block index, basis order)
/// at each compiled position.
pub fn reference_indices(teacher: &CompiledTransformer, tokens: &[&str]) -> Result<Vec<Vec<usize>>, DecodeError> {
    let program = &teacher.program;
    let ids = program.encode(tokens)?;
    let nodes = interpret_indices(program, &ids);
    let columns: Vec<Vec<usize>> = teacher
        .basis
        .variables()
        .iter()
        .map(|v| match program.find(v) {
            Some(id) => nodes[id].clone(),
            None if v == "tokens" => ids.clone(),
            None => (0..ids.len()).collect(),
        })
        .collect();
    Ok((0..ids.len()).map(|p| columns.iter().map(|c| c[p]).collect()).collect())
}

/// Student-side decoding of one example against the interpreter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedExample {
    pub decoded: VariableTable,
    pub expected: VariableTable,
    /// Student activations at the aligned positions.
    pub raw: Matrix,
    /// The same rows mapped into the compiled basis.
    pub mapped: Matrix,
}

fn check_checkpoint(checkpoint: usize, teacher: &CompiledTransformer) -> Result<(), DecodeError> {
    if checkpoint > teacher.layers() {
        return Err(DecodeError::Checkpoint {
            checkpoint,
            layers: teacher.layers(),
        });
    }
    Ok(())
}

/// Decodes compiled checkpoint `checkpoint` (0..=k) from an injected
/// student on one example.
pub fn decode_example(
    model: &InjectionCheckpoint,
    teacher: &CompiledTransformer,
    input: &str,
    answer: &str,
    checkpoint: usize,
) -> Result<DecodedExample, DecodeError> {
    check_checkpoint(checkpoint, teacher)?;
    let spec = model.task.spec()?;
    let enc = spec.encode(&model.tokenizer, input, answer)?;
    let (_, traces) = model.student.forward(std::slice::from_ref(&enc.student_ids))?;
    let vectors = &traces[0].residual[model.layer_map[checkpoint]];
    let map = model.bridge.map(checkpoint);
    let labels: Vec<String> = enc
        .student_ids
        .iter()
        .map(|&id| model.tokenizer.piece(id).to_string())
        .collect();
    let pairs = enc.aligned_pairs();
    let decoded = decode_variables(vectors, map, &teacher.basis, &pairs, &labels)?;
    let toks: Vec<&str> = enc.teacher_tokens.iter().map(String::as_str).collect();
    let truth = reference_indices(teacher, &toks)?;
    let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let expected_indices: Vec<Vec<usize>> = pairs.iter().map(|p| truth[p.1].clone()).collect();
    let expected = table_from_indices(&teacher.basis, &rows, &labels, &expected_indices);
    let raw = vectors.select_rows(&rows);
    let mapped = raw.matmul_nt(map);
    Ok(DecodedExample {
        decoded,
        expected,
        raw,
        mapped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableAccuracy {
    pub variable: String,
    pub checked: usize,
    pub agreed: usize,
    /// Accuracy of a uniform guess over the variable's domain.
    pub chance: f64,
    /// Histogram of decoded values over the domain.
    pub decoded_counts: Vec<usize>,
    /// Histogram of interpreter values over the domain.
    pub expected_counts: Vec<usize>,
}

impl VariableAccuracy {
    pub fn accuracy(&self) -> f64 {
        self.agreed as f64 / self.checked.max(1) as f64
    }

    /// Agreement expected from a guess drawn independently of the label
    /// with the observed decoded marginal.
    pub fn independent_chance(&self) -> f64 {
        let n = self.checked.max(1) as f64;
        self.decoded_counts
            .iter()
            .zip(&self.expected_counts)
            .map(|(&d, &e)| d as f64 / n * e as f64 / n)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodingReport {
    pub checkpoint: usize,
    pub examples: usize,
    pub variables: Vec<VariableAccuracy>,
}

impl DecodingReport {
    /// Unweighted mean of the per-variable accuracies.
    pub fn mean(&self) -> f64 {
        self.variables.iter().map(VariableAccuracy::accuracy).sum::<f64>() / self.variables.len().max(1) as f64
    }

    pub fn get(&self, variable: &str) -> Option<&VariableAccuracy> {
        self.variables.iter().find(|v| v.variable == variable)
    }
}

/// Fraction of (position, variable) cells where the decoded value matches
/// the interpreter, per variable. Reads checkpoint `k` when `checkpoint`
/// is `None`.
pub fn decoding_accuracy(
    model: &InjectionCheckpoint,
    teacher: &CompiledTransformer,
    examples: &[Example],
    checkpoint: Option<usize>,
) -> Result<DecodingReport, DecodeError> {
    let checkpoint = checkpoint.unwrap_or(teacher.layers());
    check_checkpoint(checkpoint, teacher)?;
    let basis = &teacher.basis;
    let mut variables: Vec<VariableAccuracy> = basis
        .variables()
        .iter()
        .map(|v| VariableAccuracy {
            variable: v.clone(),
            checked: 0,
            agreed: 0,
            chance: 1.0 / basis.values(v).unwrap().len() as f64,
            decoded_counts: vec![0; basis.values(v).unwrap().len()],
            expected_counts: vec![0; basis.values(v).unwrap().len()],
        })
        .collect();
    let domains: Vec<Vec<Value>> = basis.variables().iter().map(|v| basis.values(v).unwrap()).collect();
    let slot_of = |slot: usize, value: &Value| domains[slot].iter().position(|d| d == value).expect("domain value");
    for e in examples {
        let d = decode_example(model, teacher, &e.input, &e.answer, checkpoint)?;
        for (got, want) in d.decoded.rows.iter().zip(&d.expected.rows) {
            for (slot, acc) in variables.iter_mut().enumerate() {
                acc.checked += 1;
                acc.decoded_counts[slot_of(slot, &got.values[slot])] += 1;
                acc.expected_counts[slot_of(slot, &want.values[slot])] += 1;
                if got.values[slot] == want.values[slot] {
                    acc.agreed += 1;
                }
            }
        }
    }
    Ok(DecodingReport {
        checkpoint,
        examples: examples.len(),
        variables,
    })
}

/// Writes a matrix as headerless CSV, one row per line.
pub fn write_matrix_csv(m: &Matrix, path: &Path) -> Result<(), DecodeError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for r in 0..m.rows {
        w.write_record(m.row(r).iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix, DecodeError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| DecodeError::Parse(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(DecodeError::Parse("ragged rows".into()));
    }
    Ok(Matrix::from_rows(&rows))
}

/// Writes `raw.csv` and `mapped.csv` (positions × width) into `dir`.
pub fn export_heatmaps(raw: &Matrix, mapped: &Matrix, dir: &Path) -> Result<(PathBuf, PathBuf), DecodeError> {
    std::fs::create_dir_all(dir)?;
    let (raw_path, mapped_path) = (dir.join("raw.csv"), dir.join("mapped.csv"));
    write_matrix_csv(raw, &raw_path)?;
    write_matrix_csv(mapped, &mapped_path)?;
    Ok((raw_path, mapped_path))
}
