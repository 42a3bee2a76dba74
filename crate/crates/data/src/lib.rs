//! Seeded task generators, out-of-distribution settings and text windows.

mod ood;
mod text;

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use programs::{is_shuffle_dyck, parse_pairs, StudentTokenizer, Task, TaskError, TaskSpec, DYCK_FAMILIES};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ood::{drop_last_paren, gen_ood, is_cascading, replace_y_with_z, OodSetting};
pub use text::{check_disjoint, read_corpus, TextBatches};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("example space exhausted after {0} distinct examples")]
    Exhausted(usize),
    #[error("setting {setting} does not apply to task {task}")]
    WrongTask { setting: String, task: String },
    #[error("unknown setting {0:?}")]
    UnknownSetting(String),
    #[error("corpus has {tokens} tokens, fewer than one window of {window}")]
    CorpusTooShort { tokens: usize, window: usize },
    #[error("training and evaluation corpora overlap: {0}")]
    Overlap(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("jsonl line {line}: {message}")]
    Json { line: usize, message: String },
}

/// A prompt and its answer; `supervised` is the byte span of the answer
/// inside `prompt + answer`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub prompt: String,
    pub answer: String,
    pub supervised: (usize, usize),
}

impl Example {
    pub fn new(spec: &TaskSpec, input: &str, answer: String) -> Self {
        let prompt = spec.render_prompt(input);
        let supervised = (prompt.len(), prompt.len() + answer.len());
        Self {
            input: input.to_string(),
            prompt,
            answer,
            supervised,
        }
    }

    pub fn labelled(spec: &TaskSpec, input: &str) -> Result<Self, TaskError> {
        Ok(Self::new(spec, input, spec.label(input)?))
    }
}

/// Generation limits. Defaults follow the task descriptions: up to 30
/// parentheses, up to 40 letters, operands up to 450.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub task: Task,
    pub seed: u64,
    pub max_parens: usize,
    pub max_letters: usize,
    pub max_operand: u64,
    /// Held-out examples taken before the training stream starts.
    pub test_size: usize,
}

impl GeneratorConfig {
    pub fn new(task: Task, seed: u64) -> Self {
        Self {
            task,
            seed,
            max_parens: 30,
            max_letters: 40,
            max_operand: 450,
            test_size: 1000,
        }
    }
}

/// Consecutive duplicate draws tolerated before declaring exhaustion.
const MAX_DUPLICATE_RUN: usize = 10_000;

/// Deduplicated example stream. Every emitted input is new to the ledger;
/// `skip` pre-loads the ledger (for example with a held-out split).
pub struct Generator {
    config: GeneratorConfig,
    spec: TaskSpec,
    rng: ChaCha8Rng,
    ledger: HashSet<String>,
    balanced_next: bool,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self, DataError> {
        Ok(Self {
            spec: config.task.spec()?,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            ledger: HashSet::new(),
            balanced_next: true,
        })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn emitted(&self) -> usize {
        self.ledger.len()
    }

    /// Marks inputs as already used.
    pub fn skip<'a>(&mut self, inputs: impl IntoIterator<Item = &'a str>) {
        self.ledger.extend(inputs.into_iter().map(str::to_string));
    }

    fn space_size(&self) -> Option<usize> {
        match self.config.task {
            Task::IntegerSum => Some(((self.config.max_operand + 1) * (self.config.max_operand + 1)) as usize),
            _ => None,
        }
    }

    fn draw(&mut self) -> String {
        let c = &self.config;
        match c.task {
            Task::ShuffleDyck => {
                let balanced = self.balanced_next;
                self.balanced_next = !self.balanced_next;
                let fams = parse_pairs(&DYCK_FAMILIES).unwrap();
                if balanced {
                    random_balanced(&mut self.rng, &fams, c.max_parens)
                } else {
                    random_unbalanced(&mut self.rng, &fams, c.max_parens)
                }
            }
            Task::Count => {
                let n = self.rng.random_range(1..=c.max_letters);
                random_letters(&mut self.rng, n, &["x", "y"])
            }
            Task::IntegerSum => {
                let a = self.rng.random_range(0..=c.max_operand);
                let b = self.rng.random_range(0..=c.max_operand);
                format!("{a} + {b}")
            }
        }
    }

    /// Next unseen example.
    pub fn next_example(&mut self) -> Result<Example, DataError> {
        if self.space_size().is_some_and(|s| self.ledger.len() >= s) {
            return Err(DataError::Exhausted(self.ledger.len()));
        }
        for _ in 0..MAX_DUPLICATE_RUN {
            let input = self.draw();
            if self.ledger.insert(input.clone()) {
                return Ok(Example::labelled(&self.spec, &input)?);
            }
            if self.config.task == Task::ShuffleDyck {
                // Keep the balanced/unbalanced alternation on a rejected draw.
                self.balanced_next = !self.balanced_next;
            }
        }
        Err(DataError::Exhausted(self.ledger.len()))
    }

    pub fn take(&mut self, n: usize) -> Result<Vec<Example>, DataError> {
        (0..n).map(|_| self.next_example()).collect()
    }
}

/// Training stream of `n` distinct examples.
pub fn gen_train(config: &GeneratorConfig, n: usize) -> Result<Vec<Example>, DataError> {
    Generator::new(config.clone())?.take(n)
}

/// Held-out test split of `test_size` examples and a training generator
/// whose ledger already excludes it.
pub fn split(config: &GeneratorConfig) -> Result<(Vec<Example>, Generator), DataError> {
    let mut g = Generator::new(config.clone())?;
    let test = g.take(config.test_size)?;
    Ok((test, g))
}

pub fn random_letters(rng: &mut impl Rng, n: usize, letters: &[&str]) -> String {
    // A per-string mixing rate spreads counts over the whole range.
    let p = rng.random_range(0.0..1.0);
    (0..n)
        .map(|_| if rng.random_bool(p) { letters[0] } else { letters[1] })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random balanced shuffle-Dyck string with an even length up to `max_len`.
pub fn random_balanced(rng: &mut impl Rng, fams: &[(String, String)], max_len: usize) -> String {
    let pairs = rng.random_range(1..=max_len / 2);
    let mut opens_left = pairs;
    let mut open: Vec<usize> = vec![0; fams.len()];
    let mut out = String::new();
    while opens_left > 0 || open.iter().any(|&o| o > 0) {
        let closable: Vec<usize> = (0..fams.len()).filter(|&f| open[f] > 0).collect();
        if opens_left > 0 && (closable.is_empty() || rng.random_bool(0.5)) {
            let f = rng.random_range(0..fams.len());
            out.push_str(&fams[f].0);
            open[f] += 1;
            opens_left -= 1;
        } else {
            let f = *closable.choose(rng).unwrap();
            out.push_str(&fams[f].1);
            open[f] -= 1;
        }
    }
    out
}

/// Random string of 1 to `max_len` symbols that is not shuffle-Dyck: either
/// a balanced string with one symbol replaced, or uniform symbols.
pub fn random_unbalanced(rng: &mut impl Rng, fams: &[(String, String)], max_len: usize) -> String {
    let symbols: Vec<&str> = fams.iter().flat_map(|(l, r)| [l.as_str(), r.as_str()]).collect();
    loop {
        let s = if rng.random_bool(0.5) {
            let mut chars: Vec<String> = random_balanced(rng, fams, max_len).chars().map(String::from).collect();
            let i = rng.random_range(0..chars.len());
            chars[i] = symbols.choose(rng).unwrap().to_string();
            chars.concat()
        } else {
            let n = rng.random_range(1..=max_len);
            (0..n).map(|_| *symbols.choose(rng).unwrap()).collect()
        };
        if is_shuffle_dyck(&s, fams) == Some(false) {
            return s;
        }
    }
}

/// Shuffles in place with a seeded generator.
pub fn shuffle_examples(examples: &mut [Example], seed: u64) {
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<(), DataError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in examples {
        serde_json::to_writer(&mut w, e).expect("example serializes");
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Example>, DataError> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DataError::Json {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Bundled training corpus.
pub const TRAIN_FIXTURE: &str = include_str!("../fixtures/train.txt");
/// Bundled held-out corpus, disjoint from the training one.
pub const HELDOUT_FIXTURE: &str = include_str!("../fixtures/heldout.txt");

/// Default student vocabulary size.
pub const VOCAB_SIZE: usize = 384;

/// Student tokenizer covering every task's prompt pieces plus the most
/// frequent words of `corpus`.
pub fn build_tokenizer(corpus: &str, size: usize) -> Result<StudentTokenizer, DataError> {
    let mut required: Vec<String> = Vec::new();
    for t in Task::ALL {
        required.extend(t.spec()?.student_pieces);
    }
    let required: Vec<&str> = required.iter().map(String::as_str).collect();
    Ok(StudentTokenizer::train(corpus, &required, size)?)
}
