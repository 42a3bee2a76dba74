//! Scoring of students and compiled teachers: exact-match task accuracy,
//! held-out perplexity, the out-of-distribution suite and the
//! noise-causality experiment.

pub mod noise;
pub mod ood;
pub mod report;

use compiler::{CompileError, CompiledTransformer};
use data::Example;
use programs::{StudentInput, StudentTokenizer, TaskError, TaskSpec};
use runtime::tape::log_softmax_rows;
use runtime::{Matrix, RuntimeError, StudentModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use noise::{
    answer_subspace, default_norms, noise_causality, random_subspace, NoiseConfig, NoiseCurves, NoisePoint,
};
pub use ood::{ood_suite, OodReport, OodRow};
pub use report::{noise_csv, ood_csv, render_ood, render_summary, SummaryRow};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpus has {0} tokens; at least 2 are needed")]
    EmptyCorpus(usize),
    #[error("invalid evaluation setting: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Injection(#[from] injection::InjectionError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Result of scoring one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Correct,
    Wrong,
    /// The model cannot take this input (unknown symbols or too long).
    Unsupported,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub total: usize,
    pub scored: usize,
    pub correct: usize,
}

impl Accuracy {
    pub fn from_outcomes(outcomes: &[Outcome]) -> Self {
        Self {
            total: outcomes.len(),
            scored: outcomes.iter().filter(|&&o| o != Outcome::Unsupported).count(),
            correct: outcomes.iter().filter(|&&o| o == Outcome::Correct).count(),
        }
    }

    /// Fraction correct among scored examples; `None` when nothing could
    /// be scored.
    pub fn value(&self) -> Option<f64> {
        (self.scored > 0).then(|| self.correct as f64 / self.scored as f64)
    }

    pub fn unsupported(&self) -> usize {
        self.total - self.scored
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Every target must be the greedy choice at its position.
pub(crate) fn all_targets_greedy(logits: &Matrix, targets: &[(usize, usize)]) -> bool {
    targets.iter().all(|&(p, label)| argmax(logits.row(p)) == label)
}

/// Student ids and answer targets, or `None` when the student cannot take
/// the example.
pub(crate) fn student_input(
    student: &StudentModel,
    tokenizer: &StudentTokenizer,
    spec: &TaskSpec,
    e: &Example,
) -> Option<StudentInput> {
    let (ids, targets) = spec.encode_student(tokenizer, &e.input, &e.answer).ok()?;
    (ids.len() <= student.config.context && !targets.is_empty()).then_some((ids, targets))
}

const CHUNK: usize = 16;

/// Exact match of the greedy answer under teacher forcing: correct only
/// when every answer token is the argmax at its position.
pub fn student_outcomes(
    student: &StudentModel,
    tokenizer: &StudentTokenizer,
    spec: &TaskSpec,
    examples: &[Example],
) -> Result<Vec<Outcome>, EvalError> {
    let inputs: Vec<_> = examples
        .iter()
        .map(|e| student_input(student, tokenizer, spec, e))
        .collect();
    let supported: Vec<&StudentInput> = inputs.iter().flatten().collect();
    let seqs: Vec<Vec<usize>> = supported.iter().map(|s| s.0.clone()).collect();
    let logits = student.logits(&seqs, CHUNK)?;
    let mut scored = supported.iter().zip(&logits).map(|(s, l)| all_targets_greedy(l, &s.1));
    Ok(inputs
        .iter()
        .map(|i| match i {
            None => Outcome::Unsupported,
            Some(_) if scored.next().unwrap() => Outcome::Correct,
            Some(_) => Outcome::Wrong,
        })
        .collect())
}

/// Compiled-teacher answers under teacher forcing, compared with the
/// label string. Inputs outside its vocabulary or context are unsupported.
pub fn teacher_outcomes(
    teacher: &CompiledTransformer,
    tokenizer: &StudentTokenizer,
    spec: &TaskSpec,
    examples: &[Example],
) -> Result<Vec<Outcome>, EvalError> {
    examples
        .iter()
        .map(|e| {
            let enc = match spec.encode(tokenizer, &e.input, &e.answer) {
                Ok(enc) => enc,
                Err(TaskError::Unrenderable { .. }) => return Ok(Outcome::Unsupported),
                Err(err) => return Err(err.into()),
            };
            if enc.teacher_tokens.len() > teacher.program.max_seq_len {
                return Ok(Outcome::Unsupported);
            }
            let toks: Vec<&str> = enc.teacher_tokens.iter().map(String::as_str).collect();
            let predicted = teacher.predict(&teacher.forward(&toks)?);
            let mut answer = String::from(" ");
            for &(p, _) in &enc.supervised {
                let t = enc.alignment[p].ok_or(TaskError::Alignment(p))?;
                answer.push_str(&predicted[t]);
            }
            Ok(if answer == e.answer {
                Outcome::Correct
            } else {
                Outcome::Wrong
            })
        })
        .collect()
}

pub fn student_accuracy(
    student: &StudentModel,
    tokenizer: &StudentTokenizer,
    spec: &TaskSpec,
    examples: &[Example],
) -> Result<Accuracy, EvalError> {
    Ok(Accuracy::from_outcomes(&student_outcomes(
        student, tokenizer, spec, examples,
    )?))
}

pub fn teacher_accuracy(
    teacher: &CompiledTransformer,
    tokenizer: &StudentTokenizer,
    spec: &TaskSpec,
    examples: &[Example],
) -> Result<Accuracy, EvalError> {
    Ok(Accuracy::from_outcomes(&teacher_outcomes(
        teacher, tokenizer, spec, examples,
    )?))
}

/// `exp` of the mean next-token negative log-likelihood over consecutive
/// non-overlapping windows of at most `window` tokens.
pub fn perplexity(
    student: &StudentModel,
    tokenizer: &StudentTokenizer,
    text: &str,
    window: usize,
) -> Result<f64, EvalError> {
    if window < 2 || window > student.config.context {
        return Err(EvalError::Config(format!(
            "window {window} must lie in 2..={}",
            student.config.context
        )));
    }
    let ids = tokenizer.encode(text)?;
    if ids.len() < 2 {
        return Err(EvalError::EmptyCorpus(ids.len()));
    }
    let seqs: Vec<Vec<usize>> = ids
        .chunks(window)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect();
    let logits = student.logits(&seqs, CHUNK)?;
    let (mut nll, mut count) = (0.0, 0usize);
    for (seq, l) in seqs.iter().zip(&logits) {
        let logp = log_softmax_rows(l);
        for p in 0..seq.len() - 1 {
            nll -= logp[(p, seq[p + 1])];
            count += 1;
        }
    }
    Ok((nll / count as f64).exp())
}
