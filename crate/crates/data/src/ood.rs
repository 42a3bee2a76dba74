use std::collections::HashSet;
use std::fmt;

use programs::{is_shuffle_dyck, parse_pairs, Task, DYCK_FAMILIES};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{random_balanced, random_letters, random_unbalanced, split, DataError, Example, GeneratorConfig};

/// The three out-of-distribution settings of each task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodSetting {
    XOnly,
    CountThreeXLength,
    ReplaceYWithZ,
    CascadingOverflow,
    FourDigitSums,
    DecimalSums,
    AlmostBalanced,
    DyckThreeXLength,
    ExtraFamily,
}

const X_ONLY_MAX: usize = 40;

impl OodSetting {
    pub const ALL: [OodSetting; 9] = [
        OodSetting::XOnly,
        OodSetting::CountThreeXLength,
        OodSetting::ReplaceYWithZ,
        OodSetting::CascadingOverflow,
        OodSetting::FourDigitSums,
        OodSetting::DecimalSums,
        OodSetting::AlmostBalanced,
        OodSetting::DyckThreeXLength,
        OodSetting::ExtraFamily,
    ];

    pub fn task(self) -> Task {
        use OodSetting::*;
        match self {
            XOnly | CountThreeXLength | ReplaceYWithZ => Task::Count,
            CascadingOverflow | FourDigitSums | DecimalSums => Task::IntegerSum,
            AlmostBalanced | DyckThreeXLength | ExtraFamily => Task::ShuffleDyck,
        }
    }

    pub fn for_task(task: Task) -> Vec<OodSetting> {
        Self::ALL.into_iter().filter(|s| s.task() == task).collect()
    }

    /// Short name, unique within a task.
    pub fn name(self) -> &'static str {
        use OodSetting::*;
        match self {
            XOnly => "x-only",
            CountThreeXLength | DyckThreeXLength => "3x-length",
            ReplaceYWithZ => "replace-y-z",
            CascadingOverflow => "cascading-overflow",
            FourDigitSums => "4-digit",
            DecimalSums => "decimals",
            AlmostBalanced => "almost-balanced",
            ExtraFamily => "extra-family",
        }
    }

    pub fn parse(task: Task, name: &str) -> Result<Self, DataError> {
        Self::for_task(task)
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| DataError::UnknownSetting(name.to_string()))
    }

    /// Whether the compiled program solves the setting by construction.
    pub fn teacher_supported(self) -> bool {
        matches!(
            self,
            OodSetting::XOnly | OodSetting::ReplaceYWithZ | OodSetting::CascadingOverflow | OodSetting::AlmostBalanced
        )
    }
}

impl fmt::Display for OodSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Units overflow and a tens sum of 9, so the carry reaches the hundreds.
pub fn is_cascading(a: u64, b: u64) -> bool {
    a % 10 + b % 10 >= 10 && (a / 10) % 10 + (b / 10) % 10 == 9
}

/// Removes the last symbol of a (balanced) string.
pub fn drop_last_paren(s: &str) -> String {
    let mut s = s.to_string();
    s.pop();
    s
}

pub fn replace_y_with_z(s: &str) -> String {
    s.replace('y', "z")
}

fn sum_label(a: u64, b: u64) -> String {
    format!(" {}", a + b)
}

fn dyck_label(s: &str, fams: &[(String, String)]) -> String {
    match is_shuffle_dyck(s, fams) {
        Some(true) => " Yes".into(),
        _ => " No".into(),
    }
}

/// Up to `n` distinct examples of an out-of-distribution setting. Labels
/// come from direct oracles, since several settings lie outside the
/// teacher's vocabulary or length. X-only has exactly 40 distinct inputs.
pub fn gen_ood(task: Task, setting: OodSetting, n: usize, seed: u64) -> Result<Vec<Example>, DataError> {
    if setting.task() != task {
        return Err(DataError::WrongTask {
            setting: setting.name().into(),
            task: task.name().into(),
        });
    }
    let spec = task.spec()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut emit = |input: String, answer: String, out: &mut Vec<Example>| {
        if seen.insert(input.clone()) {
            out.push(Example::new(&spec, &input, answer));
        }
    };
    let fams = parse_pairs(&DYCK_FAMILIES)?;
    let mut misses = 0usize;
    match setting {
        OodSetting::XOnly => {
            for k in 1..=X_ONLY_MAX.min(n) {
                emit(vec!["x"; k].join(" "), format!(" {k}"), &mut out);
            }
        }
        OodSetting::ReplaceYWithZ => {
            let config = GeneratorConfig {
                test_size: n,
                ..GeneratorConfig::new(Task::Count, seed)
            };
            let (test, _) = split(&config)?;
            for e in test {
                let input = replace_y_with_z(&e.input);
                emit(input, e.answer, &mut out);
            }
        }
        OodSetting::CascadingOverflow => {
            let mut pairs: Vec<(u64, u64)> = (0..=450u64)
                .flat_map(|a| (0..=450u64).map(move |b| (a, b)))
                .filter(|&(a, b)| is_cascading(a, b))
                .collect();
            if n > pairs.len() {
                return Err(DataError::Exhausted(pairs.len()));
            }
            pairs.shuffle(&mut rng);
            for (a, b) in pairs.into_iter().take(n) {
                emit(format!("{a} + {b}"), sum_label(a, b), &mut out);
            }
        }
        _ => {
            while out.len() < n {
                let before = out.len();
                let (input, answer) = match setting {
                    OodSetting::CountThreeXLength => {
                        let len = rng.random_range(X_ONLY_MAX + 1..=3 * X_ONLY_MAX);
                        let s = random_letters(&mut rng, len, &["x", "y"]);
                        let answer = format!(" {}", s.split(' ').filter(|w| *w == "x").count());
                        (s, answer)
                    }
                    OodSetting::FourDigitSums => {
                        let (a, b) = (rng.random_range(1000..=9999u64), rng.random_range(1000..=9999u64));
                        (format!("{a} + {b}"), sum_label(a, b))
                    }
                    OodSetting::DecimalSums => {
                        // Tenths on both operands; the answer keeps one decimal.
                        let (a, b) = (rng.random_range(0..=4509u64), rng.random_range(0..=4509u64));
                        let t = a + b;
                        (
                            format!("{}.{} + {}.{}", a / 10, a % 10, b / 10, b % 10),
                            format!(" {}.{}", t / 10, t % 10),
                        )
                    }
                    OodSetting::AlmostBalanced => {
                        let s = drop_last_paren(&random_balanced(&mut rng, &fams, 30));
                        let label = dyck_label(&s, &fams);
                        (s, label)
                    }
                    OodSetting::DyckThreeXLength => {
                        // Longer than any training string, up to three times as long.
                        let s = if out.len() % 2 == 0 {
                            random_balanced(&mut rng, &fams, 90)
                        } else {
                            random_unbalanced(&mut rng, &fams, 90)
                        };
                        if s.len() <= 30 {
                            continue;
                        }
                        let label = dyck_label(&s, &fams);
                        (s, label)
                    }
                    OodSetting::ExtraFamily => {
                        let wide = parse_pairs(&["()", "{}", "[]", "<>"])?;
                        let s = if out.len() % 2 == 0 {
                            random_balanced(&mut rng, &wide, 30)
                        } else {
                            random_unbalanced(&mut rng, &wide, 30)
                        };
                        if !s.contains(['<', '>']) {
                            continue;
                        }
                        let label = dyck_label(&s, &wide);
                        (s, label)
                    }
                    _ => unreachable!(),
                };
                emit(input, answer, &mut out);
                misses = if out.len() == before { misses + 1 } else { 0 };
                if misses >= crate::MAX_DUPLICATE_RUN {
                    return Err(DataError::Exhausted(out.len()));
                }
            }
        }
    }
    Ok(out)
}
