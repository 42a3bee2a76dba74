use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cli::{interpret_input, verify_task};
use compiler::CompiledTransformer;
use data::{gen_ood, split, write_jsonl, GeneratorConfig, OodSetting};
use decode::{decode_example, decoding_accuracy, export_heatmaps};
use evaluate::{
    noise_causality, noise_csv, ood_csv, ood_suite, perplexity, render_ood, render_summary, student_accuracy,
    NoiseConfig, SummaryRow,
};
use injection::{
    pretrain_student, InjectionCheckpoint, LossWeights, PretrainConfig, StudentCheckpoint, TrainConfig, Trainer,
};
use programs::Task;
use serde_json::json;

/// Exit code when the compiled model disagrees with the interpreter.
const EXIT_MISMATCH: u8 = 3;

#[derive(Parser)]
#[command(
    name = "inject",
    about = "Compile task programs and inject them into a small language model"
)]
struct Cli {
    /// Print errors as a JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a task program into transformer weights.
    Compile {
        task: Task,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the interpreter's variable values for one input.
    Interpret {
        task: Task,
        #[arg(long)]
        input: String,
    },
    /// Check compiled weights against the interpreter.
    Verify {
        task: Task,
        /// Exhaustive input size (string length, or largest operand for sums).
        #[arg(long, default_value_t = 6)]
        exhaustive_len: usize,
        #[arg(long, default_value_t = 1000)]
        random: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Compiled weights; compiled on the fly when absent.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train a student language model on a text corpus.
    PretrainStudent {
        /// Plain-text training corpus; the bundled fixture when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        layers: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 3e-4)]
        lr: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate task examples as JSON lines.
    GenData {
        task: Task,
        /// Out-of-distribution setting name.
        #[arg(long)]
        ood: Option<String>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inject a compiled teacher into a pre-trained student.
    Train {
        task: Task,
        #[arg(long)]
        student: PathBuf,
        /// Compiled weights; compiled on the fly when absent.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Text corpus for the retention term; the bundled fixture when absent.
        #[arg(long)]
        train_corpus: Option<PathBuf>,
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        no_intervention: bool,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 80_000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-4)]
        student_lr: f64,
        #[arg(long, default_value_t = 1e-4)]
        bridge_lr: f64,
        #[arg(long, default_value_t = 12)]
        task_batch: usize,
        #[arg(long, default_value_t = 12)]
        text_batch: usize,
        /// Comma-separated student checkpoint per compiled checkpoint.
        #[arg(long, value_delimiter = ',')]
        layer_map: Option<Vec<usize>>,
        #[arg(long)]
        per_layer_bridge: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        checkpoint_every: usize,
        /// Continue from the run directory's checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode compiled variables from an injected student on one input.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: String,
        /// Answer to teacher-force; the correct label when absent.
        #[arg(long)]
        answer: Option<String>,
        /// Compiled checkpoint to read (0..=k); k when absent.
        #[arg(long)]
        checkpoint: Option<usize>,
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Directory for raw and mapped activation matrices.
        #[arg(long)]
        heatmaps: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy, decoding, perplexity and out-of-distribution report.
    Eval {
        task: Task,
        #[arg(long)]
        ckpt: PathBuf,
        /// Baseline run scored alongside.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Pre-injection student, for the perplexity reference.
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        ood: bool,
        /// Held-out corpus; perplexity is skipped when absent.
        #[arg(long)]
        perplexity: Option<PathBuf>,
        /// Training corpus, checked for overlap with the held-out corpus.
        #[arg(long)]
        train_corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy under noise in the answer subspace versus random subspaces.
    NoiseExp {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Comma-separated noise norms; a log-spaced grid when absent.
        #[arg(long, value_delimiter = ',')]
        norms: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Test examples per trial.
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
    code: u8,
}

macro_rules! error_kind {
    ($($ty:ty => $kind:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                Self {
                    kind: $kind,
                    message: e.to_string(),
                    code: 1,
                }
            }
        })*
    };
}

error_kind! {
    std::io::Error => "io",
    serde_json::Error => "json",
    rasp_core::RaspError => "program",
    programs::TaskError => "task",
    compiler::CompileError => "compile",
    data::DataError => "data",
    injection::InjectionError => "injection",
    decode::DecodeError => "decode",
    evaluate::EvalError => "evaluate",
    cli::PipelineError => "verify",
}

fn fail(kind: &'static str, message: String, code: u8) -> CliError {
    CliError { kind, message, code }
}

fn read_text(path: &Option<PathBuf>, fallback: &str) -> Result<String, CliError> {
    match path {
        Some(p) => Ok(std::fs::read_to_string(p)?),
        None => Ok(fallback.to_string()),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn teacher_for(task: Task, path: &Option<PathBuf>) -> Result<CompiledTransformer, CliError> {
    match path {
        Some(p) => Ok(CompiledTransformer::load(p)?),
        None => Ok(task.spec()?.compile()?),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Compile { task, max_len, out } => {
            let mut spec = task.spec()?;
            if let Some(n) = max_len {
                spec.program.max_seq_len = n;
            }
            let compiled = spec.compile()?;
            compiled.save(&out)?;
            println!(
                "{}: {} layers, residual width {}, written to {}",
                task,
                compiled.layers(),
                compiled.width(),
                out.display()
            );
        }
        Command::Interpret { task, input } => {
            let spec = task.spec()?;
            let table = interpret_input(&spec, &cli::default_tokenizer()?, &input)?;
            let mut header = vec!["position".to_string(), "token".to_string()];
            header.extend(table.variables.iter().map(|v| v.0.clone()));
            println!("{}", header.join("\t"));
            for (p, tok) in table.tokens.iter().enumerate() {
                let mut row = vec![p.to_string(), tok.clone()];
                row.extend(table.variables.iter().map(|v| v.1[p].to_string()));
                println!("{}", row.join("\t"));
            }
        }
        Command::Verify {
            task,
            exhaustive_len,
            random,
            seed,
            teacher,
            out,
        } => {
            let compiled = teacher_for(task, &teacher)?;
            let parts = verify_task(task, &compiled, exhaustive_len, random, seed)?;
            let mut ok = true;
            for part in &parts {
                let r = &part.report;
                let (checked, agreed) = r
                    .variables
                    .iter()
                    .fold((0, 0), |(c, a), v| (c + v.checked, a + v.agreed));
                println!(
                    "{} {}: {} sequences, variables {}/{}, outputs {}/{}, max deviation {:.2e}",
                    task, part.name, r.sequences, agreed, checked, r.output_agreed, r.output_checked, r.max_deviation
                );
                for m in &r.mismatches {
                    println!(
                        "  mismatch at {} in {:?}: {} expected {} decoded {}",
                        m.position, m.tokens, m.variable, m.expected, m.decoded
                    );
                }
                ok &= r.all_agree();
            }
            if let Some(path) = out {
                write_json(&path, &json!({"task": task, "seed": seed, "parts": parts}))?;
            }
            if !ok {
                return Err(fail(
                    "verification_failed",
                    format!("{task}: compiled model disagrees with the interpreter"),
                    EXIT_MISMATCH,
                ));
            }
        }
        Command::PretrainStudent {
            corpus,
            layers,
            width,
            heads,
            steps,
            lr,
            seed,
            out,
        } => {
            let text = read_text(&corpus, data::TRAIN_FIXTURE)?;
            let config = PretrainConfig {
                steps,
                lr,
                seed,
                layers,
                width,
                heads,
                ff_width: 4 * width,
                ..PretrainConfig::default()
            };
            let (ckpt, reports) = pretrain_student(&config, &text, |r| {
                if r.step % 50 == 0 {
                    log::info!("step {} loss {:.4}", r.step, r.loss);
                }
            })?;
            ckpt.save(&out)?;
            let losses: Vec<f64> = reports.iter().map(|r| r.loss).collect();
            let manifest = json!({
                "command": "pretrain-student",
                "config": config,
                "corpus": corpus,
                "losses": losses,
            });
            write_json(&out.with_extension("manifest.json"), &manifest)?;
            println!(
                "pretrained {} steps, final loss {:.4}",
                steps,
                losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::GenData {
            task,
            ood,
            n,
            seed,
            out,
        } => {
            let examples = match ood {
                Some(name) => gen_ood(task, OodSetting::parse(task, &name)?, n, seed)?,
                None => {
                    let config = GeneratorConfig {
                        test_size: n,
                        ..GeneratorConfig::new(task, seed)
                    };
                    split(&config)?.0
                }
            };
            write_jsonl(&out, &examples)?;
            println!("{} examples written to {}", examples.len(), out.display());
        }
        Command::Train {
            task,
            student,
            teacher,
            train_corpus,
            baseline,
            no_intervention,
            alpha,
            beta,
            gamma,
            steps,
            student_lr,
            bridge_lr,
            task_batch,
            text_batch,
            layer_map,
            per_layer_bridge,
            seed,
            checkpoint_every,
            resume,
            out,
        } => {
            let student = StudentCheckpoint::load(&student)?;
            let spec = task.spec()?;
            let teacher = teacher_for(task, &teacher)?;
            let text = read_text(&train_corpus, data::TRAIN_FIXTURE)?;
            let config = TrainConfig {
                steps,
                student_lr,
                bridge_lr,
                task_batch,
                text_batch,
                seed,
                layer_map,
                intervention: !no_intervention,
                baseline,
                weights: LossWeights { alpha, beta, gamma },
                per_layer_bridge,
                ..TrainConfig::default()
            };
            let mut trainer = Trainer::new(
                config.clone(),
                spec,
                &teacher,
                student.tokenizer,
                student.student,
                &text,
            )?;
            if resume {
                trainer.resume(&injection::InjectionCheckpoint::load(&out.join("checkpoint.json"))?)?;
            } else if out.join("losses.jsonl").exists() {
                return Err(fail(
                    "run_exists",
                    format!(
                        "{} already holds a run; pass --resume or choose another directory",
                        out.display()
                    ),
                    1,
                ));
            }
            std::fs::create_dir_all(&out)?;
            let manifest = json!({
                "command": "train",
                "task": task,
                "config": config,
                "effective_weights": config.effective_weights(),
                "intervention_active": config.intervention_active(),
                "layer_map": trainer.layer_map(),
                "teacher": {"layers": teacher.layers(), "width": teacher.width()},
                "student": trainer.student.config,
            });
            write_json(&out.join("manifest.json"), &manifest)?;
            let remaining = steps.saturating_sub(trainer.step);
            trainer.run(remaining, Some(&out), checkpoint_every, |r| {
                if r.step % 50 == 0 {
                    log::info!(
                        "step {} ce {:.4} alg {:.4} kl {:.5} total {:.4}",
                        r.step,
                        r.l_ce,
                        r.l_alg,
                        r.l_kl,
                        r.total
                    );
                }
            })?;
            println!("trained to step {}, run written to {}", trainer.step, out.display());
        }
        Command::Decode {
            ckpt,
            input,
            answer,
            checkpoint,
            teacher,
            heatmaps,
            out,
        } => {
            let model = InjectionCheckpoint::load(&ckpt)?;
            let compiled = teacher_for(model.task, &teacher)?;
            let answer = match answer {
                Some(a) => a,
                None => model.task.spec()?.label(&input)?,
            };
            let d = decode_example(
                &model,
                &compiled,
                &input,
                &answer,
                checkpoint.unwrap_or(compiled.layers()),
            )?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            d.decoded.save_csv(&out)?;
            d.expected.save_csv(&out.with_extension("expected.csv"))?;
            if let Some(dir) = heatmaps {
                export_heatmaps(&d.raw, &d.mapped, &dir)?;
            }
            let mut text = Vec::new();
            d.decoded.write_csv(&mut text)?;
            print!("{}", String::from_utf8_lossy(&text));
        }
        Command::Eval {
            task,
            ckpt,
            baseline,
            student,
            teacher,
            ood,
            perplexity: heldout,
            train_corpus,
            n,
            seed,
            out,
        } => {
            let model = InjectionCheckpoint::load(&ckpt)?;
            if model.task != task {
                return Err(fail(
                    "config",
                    format!("{} holds a {} run, not {task}", ckpt.display(), model.task),
                    1,
                ));
            }
            let base = baseline.as_deref().map(InjectionCheckpoint::load).transpose()?;
            let pre = student.as_deref().map(StudentCheckpoint::load).transpose()?;
            let compiled = teacher_for(task, &teacher)?;
            let spec = task.spec()?;
            // The held-out split the run never trained on.
            let data_config = GeneratorConfig {
                test_size: n,
                ..model.config.data_config(&spec)
            };
            let test = split(&data_config)?.0;
            let heldout_text = match &heldout {
                Some(path) => {
                    let train_path = train_corpus.clone();
                    if let Some(t) = &train_path {
                        data::check_disjoint(t, path)?;
                    }
                    Some(std::fs::read_to_string(path)?)
                }
                None => None,
            };
            let window = model.config.text_window;
            let mut rows = Vec::new();
            let mut results = serde_json::Map::new();
            let mut score = |name: &str, m: &InjectionCheckpoint| -> Result<(), CliError> {
                let acc = student_accuracy(&m.student, &m.tokenizer, &spec, &test)?;
                let decoding = decoding_accuracy(m, &compiled, &test, None)?;
                let ppl = heldout_text
                    .as_deref()
                    .map(|t| perplexity(&m.student, &m.tokenizer, t, window))
                    .transpose()?;
                rows.push(SummaryRow {
                    model: name.into(),
                    accuracy: acc.value(),
                    perplexity: ppl,
                    decoding: Some(decoding.mean()),
                });
                results.insert(
                    name.into(),
                    json!({"step": m.step, "accuracy": acc, "decoding": decoding, "perplexity": ppl}),
                );
                Ok(())
            };
            score("injected", &model)?;
            if let Some(b) = &base {
                score("baseline", b)?;
            }
            if let (Some(p), Some(t)) = (&pre, &heldout_text) {
                let ppl = perplexity(&p.student, &p.tokenizer, t, window)?;
                rows.push(SummaryRow {
                    model: "pre-injection".into(),
                    accuracy: None,
                    perplexity: Some(ppl),
                    decoding: None,
                });
                results.insert("pre-injection".into(), json!({"perplexity": ppl}));
            }
            let mut text = render_summary(&rows);
            let ood_report = if ood {
                let r = ood_suite(
                    task,
                    &compiled,
                    &model.tokenizer,
                    Some(&model.student),
                    base.as_ref().map(|b| &b.student),
                    n,
                    seed,
                )?;
                text.push('\n');
                text.push_str(&render_ood(&r));
                ood_csv(&r, std::fs::File::create(out.with_extension("ood.csv"))?)?;
                Some(r)
            } else {
                None
            };
            write_json(
                &out,
                &json!({
                    "command": "eval",
                    "task": task,
                    "examples": test.len(),
                    "seed": seed,
                    "models": results,
                    "ood": ood_report,
                }),
            )?;
            std::fs::write(out.with_extension("txt"), &text)?;
            print!("{text}");
        }
        Command::NoiseExp {
            ckpt,
            teacher,
            norms,
            trials,
            n,
            seed,
            out,
        } => {
            let model = InjectionCheckpoint::load(&ckpt)?;
            let compiled = teacher_for(model.task, &teacher)?;
            let spec = model.task.spec()?;
            let data_config = GeneratorConfig {
                test_size: n,
                ..model.config.data_config(&spec)
            };
            let test = split(&data_config)?.0;
            let config = NoiseConfig {
                norms: norms.unwrap_or_default(),
                trials,
                seed,
                checkpoint: None,
            };
            let curves = noise_causality(&model, &compiled, &test, &config)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            noise_csv(&curves, std::fs::File::create(&out)?)?;
            write_json(&out.with_extension("json"), &serde_json::to_value(&curves)?)?;
            println!(
                "clean accuracy {:.3}; subspace dimension {}",
                curves.clean_accuracy, curves.subspace_dim
            );
            for p in &curves.points {
                println!(
                    "norm {:>10.4}  answer {:.3}  random {:.3}",
                    p.norm, p.answer_accuracy, p.random_accuracy
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let json_errors = cli.json_errors;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json_errors {
                eprintln!("{}", json!({"error": e.kind, "message": e.message, "code": e.code}));
            } else {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code)
        }
    }
}
