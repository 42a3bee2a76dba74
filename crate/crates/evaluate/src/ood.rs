//! Out-of-distribution accuracy of injected and baseline students next to
//! the compiled teacher.

use compiler::CompiledTransformer;
use data::{gen_ood, OodSetting};
use programs::{StudentTokenizer, Task};
use runtime::StudentModel;
use serde::{Deserialize, Serialize};

use crate::{student_accuracy, teacher_accuracy, Accuracy, EvalError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    pub setting: String,
    /// The compiled program solves this setting by construction.
    pub teacher_supported: bool,
    pub teacher: Accuracy,
    pub injected: Option<Accuracy>,
    pub baseline: Option<Accuracy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub task: Task,
    pub examples_per_setting: usize,
    pub seed: u64,
    pub rows: Vec<OodRow>,
}

impl OodReport {
    /// Settings the teacher supports where it is not perfect.
    pub fn teacher_failures(&self) -> Vec<&OodRow> {
        self.rows
            .iter()
            .filter(|r| r.teacher_supported && r.teacher.value() != Some(1.0))
            .collect()
    }
}

/// Scores every setting of `task` on `n` generated examples. Both students
/// share `tokenizer`.
pub fn ood_suite(
    task: Task,
    teacher: &CompiledTransformer,
    tokenizer: &StudentTokenizer,
    injected: Option<&StudentModel>,
    baseline: Option<&StudentModel>,
    n: usize,
    seed: u64,
) -> Result<OodReport, EvalError> {
    let spec = task.spec()?;
    let mut rows = Vec::new();
    for setting in OodSetting::for_task(task) {
        let examples = gen_ood(task, setting, n, seed)?;
        let score = |m: Option<&StudentModel>| m.map(|s| student_accuracy(s, tokenizer, &spec, &examples)).transpose();
        rows.push(OodRow {
            setting: setting.name().to_string(),
            teacher_supported: setting.teacher_supported(),
            teacher: teacher_accuracy(teacher, tokenizer, &spec, &examples)?,
            injected: score(injected)?,
            baseline: score(baseline)?,
        });
    }
    Ok(OodReport {
        task,
        examples_per_setting: n,
        seed,
        rows,
    })
}
