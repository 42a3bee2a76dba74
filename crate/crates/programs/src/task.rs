use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use compiler::{CompileOptions, NONE_TOKEN};
use rasp_core::{json, Program, Value};
use serde::{Deserialize, Serialize};

use crate::count::{count_program, COUNT_MAX_SEQ_LEN};
use crate::dyck::{is_shuffle_dyck, parse_pairs, shuffle_dyck_program, DYCK_MAX_SEQ_LEN};
use crate::sum::{integer_sum_program, SUM_MAX_SEQ_LEN};
use crate::tokenizer::{StudentTokenizer, Token};
use crate::{TaskError, COMPUTE};

pub const DYCK_FAMILIES: [&str; 3] = ["()", "{}", "[]"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    ShuffleDyck,
    Count,
    IntegerSum,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::ShuffleDyck, Task::Count, Task::IntegerSum];

    pub fn name(self) -> &'static str {
        match self {
            Task::ShuffleDyck => "shuffle-dyck",
            Task::Count => "count",
            Task::IntegerSum => "integer-sum",
        }
    }

    pub fn spec(self) -> Result<TaskSpec, TaskError> {
        match self {
            Task::ShuffleDyck => build_shuffle_dyck(&DYCK_FAMILIES),
            Task::Count => build_count(),
            Task::IntegerSum => build_integer_sum(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, TaskError> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| TaskError::UnknownTask(s.to_string()))
    }
}

mod program_serde {
    use rasp_core::{json, Program};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Program, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_some(&json::to_value(p))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Program, D::Error> {
        json::from_value(serde_json::Value::deserialize(d)?).map_err(D::Error::custom)
    }
}

/// Maps with non-string keys, written as a list of pairs.
mod pairs_serde {
    use std::collections::BTreeMap;

    use rasp_core::Value;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<Value, String>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Value, String>, D::Error> {
        Ok(Vec::<(Value, String)>::deserialize(d)?.into_iter().collect())
    }
}

/// A task: its program, prompt format and the student/teacher alignment.
///
/// The prompt is `template` with `{s}` replaced by the task input. Teacher
/// sequences keep only program-relevant tokens: every token inside the
/// input span is copied by its core (leading space removed), the last
/// prompt token becomes the "compute" marker, and answer tokens whose core
/// is in the teacher vocabulary are copied. Other prompt positions have
/// no teacher image.
/// Student token ids and (position, label id) answer targets.
pub type StudentInput = (Vec<usize>, Vec<(usize, usize)>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: Task,
    #[serde(with = "program_serde")]
    pub program: Program,
    pub teacher_vocabulary: Vec<String>,
    /// Pieces the student tokenizer must contain for this task.
    pub student_pieces: Vec<String>,
    pub template: String,
    /// Answer token per output value; unlisted values use their display.
    #[serde(with = "pairs_serde")]
    pub output_tokens: BTreeMap<Value, String>,
    /// Dyck families, empty for the other tasks.
    #[serde(default)]
    pub families: Vec<String>,
}

/// One rendered example on both sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoded {
    pub student_ids: Vec<usize>,
    /// Byte spans of the student tokens in `prompt + answer`.
    pub spans: Vec<(usize, usize)>,
    pub teacher_tokens: Vec<String>,
    /// Teacher position of each student position, if any.
    pub alignment: Vec<Option<usize>>,
    /// (student position, label id): the position's next-token target.
    pub supervised: Vec<(usize, usize)>,
}

impl Encoded {
    /// Aligned (student position, teacher position) pairs in order.
    pub fn aligned_pairs(&self) -> Vec<(usize, usize)> {
        self.alignment
            .iter()
            .enumerate()
            .filter_map(|(s, t)| t.map(|t| (s, t)))
            .collect()
    }
}

fn core(piece: &str) -> &str {
    piece.strip_prefix(' ').unwrap_or(piece)
}

impl TaskSpec {
    pub fn compile_options(&self) -> CompileOptions {
        CompileOptions {
            output_tokens: self.output_tokens.clone(),
            ..CompileOptions::default()
        }
    }

    pub fn compile(&self) -> Result<compiler::CompiledTransformer, compiler::CompileError> {
        compiler::compile(&self.program, &self.compile_options())
    }

    pub fn render_prompt(&self, input: &str) -> String {
        self.template.replace("{s}", input)
    }

    /// Ground-truth answer (with its leading space), from a direct oracle
    /// independent of the program.
    pub fn label(&self, input: &str) -> Result<String, TaskError> {
        let bad = || TaskError::BadInput(input.to_string());
        match self.task {
            Task::ShuffleDyck => {
                let fams = parse_pairs(&self.families.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
                let ok = is_shuffle_dyck(input, &fams).ok_or_else(bad)?;
                Ok(if ok { " Yes" } else { " No" }.to_string())
            }
            Task::Count => Ok(format!(" {}", input.split_whitespace().filter(|w| *w == "x").count())),
            Task::IntegerSum => {
                let (a, c) = input.split_once(" + ").ok_or_else(bad)?;
                let a: u64 = a.parse().map_err(|_| bad())?;
                let c: u64 = c.parse().map_err(|_| bad())?;
                Ok(format!(" {}", a + c))
            }
        }
    }

    /// Token emitted for a program output value.
    pub fn output_token(&self, v: &Value) -> String {
        match self.output_tokens.get(v) {
            Some(t) => t.clone(),
            None if v.is_null() => NONE_TOKEN.to_string(),
            None => v.to_string(),
        }
    }

    /// Renders `input` with `answer` on both sides.
    pub fn encode(&self, tokenizer: &StudentTokenizer, input: &str, answer: &str) -> Result<Encoded, TaskError> {
        let prompt = self.render_prompt(input);
        let slot_start = self.template.find("{s}").expect("template has a slot");
        let slot = slot_start..slot_start + input.len();
        let prompt_tokens = tokenizer.encode_spans(&prompt)?;
        let answer_tokens: Vec<Token> = tokenizer
            .encode_spans(answer)?
            .into_iter()
            .map(|t| Token {
                start: t.start + prompt.len(),
                end: t.end + prompt.len(),
                ..t
            })
            .collect();
        if prompt_tokens.is_empty() || answer_tokens.is_empty() {
            return Err(TaskError::BadInput(format!("{prompt:?} / {answer:?}")));
        }
        let last_prompt = prompt_tokens.len() - 1;
        let mut teacher = Vec::new();
        let mut alignment = Vec::new();
        let full = format!("{prompt}{answer}");
        for (i, t) in prompt_tokens.iter().chain(&answer_tokens).enumerate() {
            let piece = core(&full[t.start..t.end]);
            let core_start = t.end - piece.len();
            let in_slot = core_start >= slot.start && t.end <= slot.end && !piece.is_empty();
            let image = if i == last_prompt {
                Some(COMPUTE.to_string())
            } else if in_slot && i < last_prompt {
                if !self.teacher_vocabulary.iter().any(|v| v == piece) {
                    return Err(TaskError::Unrenderable {
                        ch: piece.chars().next().unwrap(),
                        position: core_start,
                    });
                }
                Some(piece.to_string())
            } else if i > last_prompt && self.teacher_vocabulary.iter().any(|v| v == piece) {
                Some(piece.to_string())
            } else {
                None
            };
            alignment.push(image.map(|tok| {
                teacher.push(tok);
                teacher.len() - 1
            }));
        }
        let student_ids: Vec<usize> = prompt_tokens.iter().chain(&answer_tokens).map(|t| t.id).collect();
        let supervised = (last_prompt..student_ids.len() - 1)
            .map(|p| (p, student_ids[p + 1]))
            .collect();
        Ok(Encoded {
            student_ids,
            spans: prompt_tokens
                .iter()
                .chain(&answer_tokens)
                .map(|t| (t.start, t.end))
                .collect(),
            teacher_tokens: teacher,
            alignment,
            supervised,
        })
    }

    /// Student side only: token ids and (position, label id) targets. Works
    /// for inputs the teacher cannot render.
    pub fn encode_student(
        &self,
        tokenizer: &StudentTokenizer,
        input: &str,
        answer: &str,
    ) -> Result<StudentInput, TaskError> {
        let prompt = tokenizer.encode(&self.render_prompt(input))?;
        let answer_ids = tokenizer.encode(answer)?;
        if prompt.is_empty() || answer_ids.is_empty() {
            return Err(TaskError::BadInput(format!("{input:?} / {answer:?}")));
        }
        let last_prompt = prompt.len() - 1;
        let ids: Vec<usize> = prompt.into_iter().chain(answer_ids).collect();
        let supervised = (last_prompt..ids.len() - 1).map(|p| (p, ids[p + 1])).collect();
        Ok((ids, supervised))
    }

    /// Answer string produced by the interpreter, teacher-forced on the
    /// given answer: the program outputs at the supervised positions,
    /// concatenated with the student spacing convention.
    pub fn interpret_answer(
        &self,
        tokenizer: &StudentTokenizer,
        input: &str,
        answer: &str,
    ) -> Result<String, TaskError> {
        let enc = self.encode(tokenizer, input, answer)?;
        let toks: Vec<&str> = enc.teacher_tokens.iter().map(|s| s.as_str()).collect();
        let trace = rasp_core::interpret(&self.program, &toks)?;
        let out = trace.get(&self.program.nodes[self.program.output].name).unwrap();
        let mut s = String::new();
        for (i, &(p, _)) in enc.supervised.iter().enumerate() {
            let t = enc.alignment[p].ok_or(TaskError::Alignment(p))?;
            let tok = self.output_token(&out[t]);
            if i == 0 {
                s.push(' ');
            }
            s.push_str(&tok);
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("task spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, TaskError> {
        serde_json::from_str(s).map_err(|e| TaskError::Json(e.to_string()))
    }

    /// Program JSON document, for inspection.
    pub fn program_json(&self) -> String {
        json::to_json(&self.program)
    }
}

fn pieces_of(texts: &[&str]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in texts {
        for (a, b) in crate::tokenizer::scan(t).expect("ascii template") {
            let p = t[a..b].to_string();
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

pub fn build_shuffle_dyck(pairs: &[&str]) -> Result<TaskSpec, TaskError> {
    let program = shuffle_dyck_program(pairs, DYCK_MAX_SEQ_LEN)?;
    let template = "Are parentheses here correctly matched? {s}. Answer:".to_string();
    let mut output_tokens = BTreeMap::new();
    output_tokens.insert(Value::Bool(true), "Yes".to_string());
    output_tokens.insert(Value::Bool(false), "No".to_string());
    Ok(TaskSpec {
        task: Task::ShuffleDyck,
        teacher_vocabulary: program.vocabulary.clone(),
        student_pieces: pieces_of(&[&template.replace("{s}", ""), " Yes", " No"]),
        program,
        template,
        output_tokens,
        families: pairs.iter().map(|s| s.to_string()).collect(),
    })
}

pub fn build_count() -> Result<TaskSpec, TaskError> {
    let program = count_program(COUNT_MAX_SEQ_LEN)?;
    let template = "What is the number of 'X' in this text? {s}. Answer:".to_string();
    Ok(TaskSpec {
        task: Task::Count,
        teacher_vocabulary: program.vocabulary.clone(),
        student_pieces: pieces_of(&[&template.replace("{s}", "")]),
        program,
        template,
        output_tokens: BTreeMap::new(),
        families: Vec::new(),
    })
}

pub fn build_integer_sum() -> Result<TaskSpec, TaskError> {
    let program = integer_sum_program(SUM_MAX_SEQ_LEN)?;
    Ok(TaskSpec {
        task: Task::IntegerSum,
        teacher_vocabulary: program.vocabulary.clone(),
        student_pieces: Vec::new(),
        program,
        template: "{s} =".to_string(),
        output_tokens: BTreeMap::new(),
        families: Vec::new(),
    })
}
