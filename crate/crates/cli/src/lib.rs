//! Shared pieces of the command-line pipeline.

use compiler::{verify, verify_exhaustive, CompileError, CompiledTransformer, VerifyReport};
use data::{gen_ood, split, DataError, Example, GeneratorConfig, OodSetting, TRAIN_FIXTURE, VOCAB_SIZE};
use programs::{StudentTokenizer, Task, TaskError, TaskSpec, COMPUTE};
use rasp_core::{interpret, Value};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Rasp(#[from] rasp_core::RaspError),
    #[error("exhaustive size {size} would enumerate {count} inputs; the limit is {MAX_EXHAUSTIVE}")]
    TooMany { size: usize, count: f64 },
}

/// Largest exhaustive enumeration accepted.
pub const MAX_EXHAUSTIVE: usize = 5_000_000;

/// Number of inputs [`exhaustive_inputs`] produces.
pub fn exhaustive_count(task: Task, n: usize) -> f64 {
    let geometric = |base: f64| (1..=n).map(|l| base.powi(l as i32)).sum::<f64>();
    match task {
        Task::ShuffleDyck => geometric(6.0),
        Task::Count => geometric(2.0),
        Task::IntegerSum => ((n + 1) * (n + 1)) as f64,
    }
}

/// Tokenizer built from the bundled training corpus, as used by the
/// default pre-training run.
pub fn default_tokenizer() -> Result<StudentTokenizer, PipelineError> {
    Ok(data::build_tokenizer(TRAIN_FIXTURE, VOCAB_SIZE)?)
}

/// Teacher token sequence of `input` rendered with its correct answer.
pub fn teacher_tokens(
    spec: &TaskSpec,
    tokenizer: &StudentTokenizer,
    input: &str,
) -> Result<Vec<String>, PipelineError> {
    let e = Example::labelled(spec, input)?;
    Ok(spec.encode(tokenizer, &e.input, &e.answer)?.teacher_tokens)
}

/// Per-position interpreter values of every program variable on `input`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpretedInput {
    pub tokens: Vec<String>,
    pub variables: Vec<(String, Vec<Value>)>,
}

pub fn interpret_input(
    spec: &TaskSpec,
    tokenizer: &StudentTokenizer,
    input: &str,
) -> Result<InterpretedInput, PipelineError> {
    let tokens = teacher_tokens(spec, tokenizer, input)?;
    let toks: Vec<&str> = tokens.iter().map(String::as_str).collect();
    let trace = interpret(&spec.program, &toks)?;
    Ok(InterpretedInput {
        tokens,
        variables: trace.columns.into_iter().map(|c| (c.name, c.values)).collect(),
    })
}

/// Every input of the task's own shape up to size `n`: shuffle-Dyck
/// strings of length ≤ n, x/y strings of ≤ n letters, or sums with both
/// operands ≤ n.
pub fn exhaustive_inputs(task: Task, n: usize) -> Vec<String> {
    match task {
        Task::ShuffleDyck => {
            let symbols: Vec<char> = "()[]{}".chars().collect();
            let mut out = Vec::new();
            let mut layer = vec![String::new()];
            for _ in 0..n {
                layer = layer
                    .iter()
                    .flat_map(|s| symbols.iter().map(move |c| format!("{s}{c}")))
                    .collect();
                out.extend(layer.iter().cloned());
            }
            out
        }
        Task::Count => (1..=n)
            .flat_map(|len| {
                (0..1u64 << len).map(move |bits| {
                    (0..len)
                        .map(|i| if bits >> i & 1 == 1 { "x" } else { "y" })
                        .collect::<Vec<_>>()
                        .join(" ")
                })
            })
            .collect(),
        Task::IntegerSum => (0..=n)
            .flat_map(|a| (0..=n).map(move |b| format!("{a} + {b}")))
            .collect(),
    }
}

/// One named group of verified inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyPart {
    pub name: String,
    pub report: VerifyReport,
}

/// Number of cascading-overflow sums added to the random sum inputs.
pub const CASCADING_CASES: usize = 100;

/// Compiled model against the interpreter on exhaustive and random
/// inputs rendered exactly as in training. Shuffle-Dyck exhaustive inputs
/// are enumerated directly on the teacher vocabulary with the "compute"
/// marker appended.
pub fn verify_task(
    task: Task,
    compiled: &CompiledTransformer,
    exhaustive_len: usize,
    random: usize,
    seed: u64,
) -> Result<Vec<VerifyPart>, PipelineError> {
    let spec = task.spec()?;
    let tokenizer = default_tokenizer()?;
    let render = |inputs: &[String]| -> Result<Vec<Vec<String>>, PipelineError> {
        inputs.iter().map(|i| teacher_tokens(&spec, &tokenizer, i)).collect()
    };
    let mut parts = Vec::new();
    let count = exhaustive_count(task, exhaustive_len);
    if count > MAX_EXHAUSTIVE as f64 {
        return Err(PipelineError::TooMany {
            size: exhaustive_len,
            count,
        });
    }
    if exhaustive_len > 0 {
        let report = match task {
            Task::ShuffleDyck => {
                let symbols = ["(", ")", "[", "]", "{", "}"];
                verify_exhaustive(compiled, &symbols, exhaustive_len, &[COMPUTE])?
            }
            _ => verify(compiled, &render(&exhaustive_inputs(task, exhaustive_len))?)?,
        };
        parts.push(VerifyPart {
            name: format!("exhaustive-{exhaustive_len}"),
            report,
        });
    }
    if random > 0 {
        let config = GeneratorConfig {
            test_size: random,
            ..GeneratorConfig::new(task, seed)
        };
        let inputs: Vec<String> = split(&config)?.0.into_iter().map(|e| e.input).collect();
        parts.push(VerifyPart {
            name: format!("random-{random}"),
            report: verify(compiled, &render(&inputs)?)?,
        });
        if task == Task::IntegerSum {
            let cascading: Vec<String> = gen_ood(task, OodSetting::CascadingOverflow, CASCADING_CASES, seed)?
                .into_iter()
                .map(|e| e.input)
                .collect();
            parts.push(VerifyPart {
                name: format!("cascading-{CASCADING_CASES}"),
                report: verify(compiled, &render(&cascading)?)?,
            });
        }
    }
    Ok(parts)
}
