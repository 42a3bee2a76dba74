//! Acceptance criteria, one PASS/FAIL line each. Hard gates fail the
//! target; soft gates and reports only print.
//!
//! Environment:
//! - `ACCEPTANCE_FULL=1`: full desk budget (2,000 pre-training steps,
//!   20,000 injection steps at the default learning rates) instead of the
//!   reduced one.
//! - `ACCEPTANCE_RUNS=<dir>`: evaluate existing runs instead of training:
//!   `<dir>/student.json`, `<dir>/count_injected/checkpoint.json` and
//!   `<dir>/count_baseline/checkpoint.json`.
//! - `ACCEPTANCE_ONLY=<ids>`: comma-separated criteria to run; the rest
//!   are reported as skipped.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::Instant;

use cli::verify_task;
use compiler::{CompiledTransformer, VerifyReport};
use data::{split, GeneratorConfig, HELDOUT_FIXTURE, TRAIN_FIXTURE};
use decode::decoding_accuracy;
use evaluate::{noise_causality, ood_suite, perplexity, render_ood, student_accuracy, NoiseConfig, NoiseCurves};
use injection::{
    algorithm_loss, ce_loss, kl_loss, pretrain_student, roll_intervention, subspace_projector, InjectionCheckpoint,
    LinearBridge, LossWeights, PretrainConfig, StudentCheckpoint, TrainConfig, Trainer,
};
use programs::Task;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use runtime::{Matrix, Tape, Var};

struct Gates {
    hard_failures: Vec<String>,
}

impl Gates {
    fn report(&mut self, id: &str, name: &str, hard: bool, pass: bool, detail: &str) {
        let kind = if hard { "hard" } else { "soft" };
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("[{verdict}] criterion {id} {name} ({kind}): {detail}");
        if hard && !pass {
            self.hard_failures.push(format!("{id} {name}"));
        }
    }
}

// ---------------------------------------------------------------- 1

fn verify_summary(parts: &[cli::VerifyPart]) -> (bool, String) {
    let mut ok = true;
    let mut notes = Vec::new();
    for p in parts {
        let r: &VerifyReport = &p.report;
        ok &= r.all_agree() && r.sequences > 0;
        notes.push(format!(
            "{} {} seqs {}/{} outputs",
            p.name, r.sequences, r.output_agreed, r.output_checked
        ));
    }
    (ok, notes.join(", "))
}

fn criterion_1(gates: &mut Gates) {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for (task, exhaustive, random) in [
        (Task::ShuffleDyck, 8, 0),
        (Task::Count, 10, 1000),
        (Task::IntegerSum, 50, 1000),
    ] {
        let compiled = task.spec().unwrap().compile().unwrap();
        match verify_task(task, &compiled, exhaustive, random, 42) {
            Ok(parts) => {
                let (pass, note) = verify_summary(&parts);
                ok &= pass;
                details.push(format!("{task}: {note}"));
            }
            Err(e) => {
                ok = false;
                details.push(format!("{task}: error {e}"));
            }
        }
    }
    details.push(format!("{:.0}s", start.elapsed().as_secs_f64()));
    gates.report("1", "compiler matches interpreter", true, ok, &details.join("; "));
}

// ---------------------------------------------------------------- 2

fn randn(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn tiny_trainer_reports(weights: LossWeights) -> Vec<injection::LossReport> {
    let tok = data::build_tokenizer(TRAIN_FIXTURE, 256).unwrap();
    let config = runtime::StudentConfig {
        vocab_size: tok.len(),
        context: 96,
        layers: 2,
        width: 128,
        heads: 2,
        ff_width: 64,
    };
    let student = runtime::StudentModel::init(config, &mut ChaCha8Rng::seed_from_u64(1));
    let spec = Task::Count.spec().unwrap();
    let teacher = spec.compile().unwrap();
    let train = TrainConfig {
        task_batch: 4,
        text_batch: 2,
        text_window: 16,
        test_size: 20,
        weights,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(train, spec, &teacher, tok, student, TRAIN_FIXTURE).unwrap();
    t.run(4, None, 0, |_| {}).unwrap()
}

fn criterion_2(gates: &mut Gates) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = [0.0f64; 5];
    for _ in 0..20 {
        let (m, d, k, n) = (
            rng.random_range(2..6),
            8,
            rng.random_range(1..4),
            rng.random_range(1..5),
        );
        let pairs: Vec<(usize, usize)> = (0..n).map(|p| (p, p)).collect();
        let student: Vec<Matrix> = (0..=k).map(|_| randn(&mut rng, n, d)).collect();
        let bridge = LinearBridge::init(d, m, 1, &mut rng).unwrap();
        let layer_map: Vec<usize> = (0..=k).collect();
        let mapped: Vec<Matrix> = student.iter().map(|h| h.matmul_nt(&bridge.maps[0])).collect();
        let zero = algorithm_loss(&student, &mapped, &bridge, &layer_map, &pairs);
        let anti: Vec<Matrix> = mapped
            .iter()
            .map(|x| {
                let mut y = x.clone();
                y.scale(-1.0);
                y
            })
            .collect();
        let two = algorithm_loss(&student, &anti, &bridge, &layer_map, &pairs);
        worst[0] = worst[0].max(zero.abs());
        worst[1] = worst[1].max((two - 2.0).abs());
        let logits = randn(&mut rng, n, 7);
        worst[2] = worst[2].max(kl_loss(&logits, &logits).abs());
        let mut perfect = Matrix::zeros(n, 7);
        let targets: Vec<(usize, usize)> = (0..n).map(|r| (r, rng.random_range(0..7))).collect();
        for &(r, c) in &targets {
            perfect[(r, c)] = 1e3;
        }
        worst[3] = worst[3].max(ce_loss(&perfect, &targets).unwrap().abs());
    }
    let weights = LossWeights {
        alpha: 0.7,
        beta: 1.3,
        gamma: 2.1,
    };
    for r in tiny_trainer_reports(weights) {
        worst[4] = worst[4].max((r.total - weights.total(r.l_ce, r.l_alg, r.l_kl)).abs());
    }
    let ok = worst.iter().all(|&w| w <= 1e-12);
    gates.report(
        "2",
        "loss identities",
        true,
        ok,
        &format!(
            "max |L_ALG aligned| {:.1e}, |L_ALG antiparallel - 2| {:.1e}, KL(p,p) {:.1e}, CE perfect {:.1e}, total decomposition {:.1e} (tolerance 1e-12)",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    );
}

// ---------------------------------------------------------------- 3

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_INSTANCES: usize = 50;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

type Graph<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

fn fd_check(inputs: &[Matrix], f: &Graph) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m)).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss);
    let eval = |ins: &[Matrix]| {
        let mut t = Tape::new();
        let v: Vec<Var> = ins.iter().map(|m| t.param(m)).collect();
        let l = f(&mut t, &v);
        t.scalar(l)
    };
    let mut worst: f64 = 0.0;
    for (i, m) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], m.rows, m.cols);
        let numeric: Vec<f64> = (0..m.data.len())
            .map(|j| {
                let (mut plus, mut minus) = (inputs.to_vec(), inputs.to_vec());
                plus[i].data[j] += FD_STEP;
                minus[i].data[j] -= FD_STEP;
                (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP)
            })
            .collect();
        worst = worst.max(rel_err(&analytic.data, &numeric));
    }
    worst
}

fn criterion_3(gates: &mut Gates) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ops: Vec<(&str, f64)> = Vec::new();
    let mut measure = |name: &'static str, rng: &mut ChaCha8Rng, gen: &dyn Fn(&mut ChaCha8Rng) -> f64| {
        let worst = (0..FD_INSTANCES).map(|_| gen(rng)).fold(0.0, f64::max);
        ops.push((name, worst));
    };
    measure("add", &mut rng, &|rng| {
        let (r, c) = (rng.random_range(1..4), rng.random_range(1..5));
        let (probe, k) = (randn(rng, r, c), randn(rng, r, c));
        fd_check(&[randn(rng, r, c), randn(rng, r, c)], &|t, v| {
            let s = t.add(v[0], v[1]);
            let s = t.add_const(s, &k);
            t.dot_const(s, probe.clone())
        })
    });
    measure("linear", &mut rng, &|rng| {
        let (n, a, b) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));
        let probe = randn(rng, n, b);
        fd_check(&[randn(rng, n, a), randn(rng, a, b), randn(rng, 1, b)], &|t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]));
            t.dot_const(y, probe.clone())
        })
    });
    measure("matmul_nt", &mut rng, &|rng| {
        let (n, m, d) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..5));
        let probe = randn(rng, n, m);
        fd_check(&[randn(rng, n, d), randn(rng, m, d)], &|t, v| {
            let y = t.matmul_nt(v[0], v[1]);
            t.dot_const(y, probe.clone())
        })
    });
    measure("layer_norm", &mut rng, &|rng| {
        let (n, d) = (rng.random_range(1..4), rng.random_range(2..6));
        let probe = randn(rng, n, d);
        fd_check(&[randn(rng, n, d), randn(rng, 1, d), randn(rng, 1, d)], &|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2]);
            t.dot_const(y, probe.clone())
        })
    });
    measure("gelu", &mut rng, &|rng| {
        let (n, d) = (rng.random_range(1..4), rng.random_range(1..5));
        let probe = randn(rng, n, d);
        let mut x = randn(rng, n, d);
        x.scale(3.0);
        fd_check(&[x], &|t, v| {
            let y = t.gelu(v[0]);
            t.dot_const(y, probe.clone())
        })
    });
    measure("attention", &mut rng, &|rng| {
        let heads = rng.random_range(1..3);
        let d = heads * rng.random_range(1..3);
        let mut segments = Vec::new();
        let mut rows = 0;
        for _ in 0..rng.random_range(1..3) {
            let l = rng.random_range(1..4);
            segments.push((rows, l));
            rows += l;
        }
        let probe = randn(rng, rows, d);
        fd_check(
            &[randn(rng, rows, d), randn(rng, rows, d), randn(rng, rows, d)],
            &|t, v| {
                let y = t.attention(v[0], v[1], v[2], heads, &segments);
                t.dot_const(y, probe.clone())
            },
        )
    });
    measure("embed+gather_rows", &mut rng, &|rng| {
        let (vocab, d, n) = (rng.random_range(2..5), rng.random_range(1..4), rng.random_range(1..6));
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
        let rows: Vec<usize> = (0..rng.random_range(1..5)).map(|_| rng.random_range(0..n)).collect();
        let probe = randn(rng, rows.len(), d);
        fd_check(&[randn(rng, vocab, d)], &|t, v| {
            let e = t.embed(v[0], &ids);
            let g = t.gather_rows(e, &rows);
            t.dot_const(g, probe.clone())
        })
    });
    measure("cross_entropy", &mut rng, &|rng| {
        let (n, vocab) = (rng.random_range(1..5), rng.random_range(2..6));
        let targets: Vec<(usize, usize)> = (0..rng.random_range(1..4))
            .map(|_| (rng.random_range(0..n), rng.random_range(0..vocab)))
            .collect();
        fd_check(&[randn(rng, n, vocab)], &|t, v| t.cross_entropy(v[0], &targets))
    });
    measure("kl_div", &mut rng, &|rng| {
        let (n, vocab) = (rng.random_range(1..5), rng.random_range(2..6));
        let rows: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(0..n)).collect();
        let reference = randn(rng, rows.len(), vocab);
        fd_check(&[randn(rng, n, vocab)], &|t, v| t.kl_div(v[0], &reference, &rows))
    });
    measure("cosine_loss", &mut rng, &|rng| {
        let (n, d) = (rng.random_range(1..4), rng.random_range(2..5));
        let target = randn(rng, n, d);
        fd_check(&[randn(rng, n, d)], &|t, v| t.cosine_loss(v[0], target.clone()))
    });
    measure("weighted_sum", &mut rng, &|rng| {
        let (w1, w2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (p1, p2) = (randn(rng, 2, 3), randn(rng, 2, 3));
        fd_check(&[randn(rng, 2, 3)], &|t, v| {
            let a = t.dot_const(v[0], p1.clone());
            let g = t.gelu(v[0]);
            let b = t.dot_const(g, p2.clone());
            t.weighted_sum(&[(a, w1), (b, w2)])
        })
    });
    measure("roll (subspace path)", &mut rng, &|rng| {
        // The rolled orthogonal part is detached; differentiating through
        // the subspace part alone must match central differences of
        // `probe · P x`.
        let (batch, len, d) = (rng.random_range(2..4), rng.random_range(1..3), rng.random_range(3..6));
        let rank = rng.random_range(1..d);
        let w = randn(rng, rank, d);
        let p = Arc::new(subspace_projector(&w).unwrap());
        let x0 = randn(rng, batch * len, d);
        let probe = randn(rng, batch * len, d);
        let mut tape = Tape::new();
        let xv = tape.param(&x0);
        let y = tape.roll(xv, p.clone(), batch);
        let l = tape.dot_const(y, probe.clone());
        let analytic = tape.backward(l).get_or_zeros(xv, x0.rows, x0.cols);
        let value = |x: &Matrix| -> f64 {
            let px = x.matmul_nt(&p);
            px.data.iter().zip(&probe.data).map(|(a, b)| a * b).sum()
        };
        let numeric: Vec<f64> = (0..x0.data.len())
            .map(|j| {
                let (mut a, mut b) = (x0.clone(), x0.clone());
                a.data[j] += FD_STEP;
                b.data[j] -= FD_STEP;
                (value(&a) - value(&b)) / (2.0 * FD_STEP)
            })
            .collect();
        rel_err(&analytic.data, &numeric)
    });
    let ok = ops.iter().all(|&(_, w)| w <= FD_TOL);
    let detail = ops
        .iter()
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    gates.report(
        "3",
        "gradients match central differences",
        true,
        ok,
        &format!("{FD_INSTANCES} instances per op, worst relative error: {detail} (tolerance 1e-4)"),
    );
}

// ---------------------------------------------------------------- 4

fn criterion_4(gates: &mut Gates) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut identity_ok, mut idempotence, mut leakage) = (true, 0.0f64, 0.0f64);
    for trial in 0..20 {
        let (d, m) = if trial < 5 {
            (128, 117)
        } else {
            (rng.random_range(3..12), 0)
        };
        let m = if m == 0 { rng.random_range(1..d) } else { m };
        let bridge = LinearBridge::init(d, m, 1, &mut rng).unwrap();
        let p = subspace_projector(&bridge.maps[0]).unwrap();
        let pp = p.matmul(&p);
        idempotence = idempotence.max(pp.max_abs_diff(&p));

        let h = randn(&mut rng, 3, d);
        identity_ok &= roll_intervention(&h, &p, 1) == h;
        let mut tape = Tape::new();
        let x = tape.param(&h);
        let y = tape.roll(x, Arc::new(p.clone()), 1);
        identity_ok &= *tape.value(y) == h;

        // With several sequences, the only gradient path is the subspace
        // part: d/dh <probe, roll(h)> = probe · P row by row.
        let batch = 3;
        let h = randn(&mut rng, batch * 2, d);
        let probe = randn(&mut rng, batch * 2, d);
        let mut tape = Tape::new();
        let x = tape.param(&h);
        let y = tape.roll(x, Arc::new(p.clone()), batch);
        let l = tape.dot_const(y, probe.clone());
        let g = tape.backward(l).get_or_zeros(x, h.rows, h.cols);
        leakage = leakage.max(g.max_abs_diff(&probe.matmul_nt(&p)));
    }
    let ok = identity_ok && idempotence <= 1e-10 && leakage <= 1e-10;
    gates.report(
        "4",
        "intervention contract",
        true,
        ok,
        &format!(
            "batch-1 roll identity {}, max ||PP-P||inf {idempotence:.1e}, max gradient deviation from the subspace path {leakage:.1e}",
            if identity_ok { "exact" } else { "violated" }
        ),
    );
}

// ---------------------------------------------------------------- desk run

struct Desk {
    label: String,
    student: StudentCheckpoint,
    injected: InjectionCheckpoint,
    baseline: InjectionCheckpoint,
}

fn train_run(student: &StudentCheckpoint, teacher: &CompiledTransformer, config: TrainConfig) -> InjectionCheckpoint {
    let spec = Task::Count.spec().unwrap();
    let mut t = Trainer::new(
        config,
        spec,
        teacher,
        student.tokenizer.clone(),
        student.student.clone(),
        TRAIN_FIXTURE,
    )
    .unwrap();
    let steps = t.config.steps;
    let reports = t
        .run(steps, None, 0, |r| {
            if r.step % 500 == 0 {
                eprintln!("  step {} ce {:.3} alg {:.3} kl {:.4}", r.step, r.l_ce, r.l_alg, r.l_kl);
            }
        })
        .unwrap();
    let last = reports.last().unwrap();
    eprintln!(
        "  final step {} ce {:.3} alg {:.3} kl {:.4}",
        last.step, last.l_ce, last.l_alg, last.l_kl
    );
    t.checkpoint()
}

fn desk(teacher: &CompiledTransformer) -> Desk {
    if let Ok(dir) = std::env::var("ACCEPTANCE_RUNS") {
        let dir = PathBuf::from(dir);
        let injected = InjectionCheckpoint::load(&dir.join("count_injected/checkpoint.json")).unwrap();
        let baseline = InjectionCheckpoint::load(&dir.join("count_baseline/checkpoint.json")).unwrap();
        return Desk {
            label: format!(
                "runs from {} ({} injection steps, student lr {:e})",
                dir.display(),
                injected.step,
                injected.config.student_lr
            ),
            student: StudentCheckpoint::load(&dir.join("student.json")).unwrap(),
            injected,
            baseline,
        };
    }
    let full = std::env::var("ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let (pretrain_steps, inject_steps, lr) = if full { (2000, 20_000, 1e-4) } else { (100, 150, 3e-4) };
    eprintln!("desk run: pre-training {pretrain_steps} steps");
    let (student, _) = pretrain_student(
        &PretrainConfig {
            steps: pretrain_steps,
            ..PretrainConfig::default()
        },
        TRAIN_FIXTURE,
        |_| {},
    )
    .unwrap();
    let config = TrainConfig {
        steps: inject_steps,
        student_lr: lr,
        bridge_lr: lr,
        ..TrainConfig::default()
    };
    eprintln!("desk run: injecting {inject_steps} steps");
    let injected = train_run(&student, teacher, config.clone());
    eprintln!("desk run: baseline {inject_steps} steps");
    let baseline = train_run(
        &student,
        teacher,
        TrainConfig {
            baseline: true,
            ..config
        },
    );
    Desk {
        label: format!(
            "{} config: {pretrain_steps} pre-training steps, {inject_steps} injection steps, lr {lr:e}",
            if full { "full" } else { "reduced" }
        ),
        student,
        injected,
        baseline,
    }
}

fn test_examples(model: &InjectionCheckpoint, n: usize) -> Vec<data::Example> {
    let spec = model.task.spec().unwrap();
    split(&GeneratorConfig {
        test_size: n,
        ..model.config.data_config(&spec)
    })
    .unwrap()
    .0
}

// ---------------------------------------------------------------- 5

fn criterion_5(gates: &mut Gates, desk: &Desk, teacher: &CompiledTransformer) {
    let spec = Task::Count.spec().unwrap();
    let m = &desk.injected;
    let test = test_examples(m, 1000);
    let acc = student_accuracy(&m.student, &m.tokenizer, &spec, &test)
        .unwrap()
        .value()
        .unwrap_or(0.0);
    let base = student_accuracy(&desk.baseline.student, &desk.baseline.tokenizer, &spec, &test)
        .unwrap()
        .value()
        .unwrap_or(0.0);
    let decoding = decoding_accuracy(m, teacher, &test, None).unwrap();
    let window = m.config.text_window;
    let pre = perplexity(&desk.student.student, &desk.student.tokenizer, HELDOUT_FIXTURE, window).unwrap();
    let post = perplexity(&m.student, &m.tokenizer, HELDOUT_FIXTURE, window).unwrap();
    let degradation = (post - pre) / pre;
    let per_var = decoding
        .variables
        .iter()
        .map(|v| format!("{} {:.1}%", v.variable, 100.0 * v.accuracy()))
        .collect::<Vec<_>>()
        .join(", ");
    let ok = acc >= 0.95 && decoding.mean() >= 0.80 && degradation <= 0.05;
    gates.report(
        "5",
        "desk-scale injection",
        false,
        ok,
        &format!(
            "{}; accuracy {:.1}% (>= 95%; baseline {:.1}%), mean decoding {:.1}% (>= 80%; {per_var}), perplexity {pre:.2} -> {post:.2} ({:+.2}%, <= +5%)",
            desk.label,
            100.0 * acc,
            100.0 * base,
            100.0 * decoding.mean(),
            100.0 * degradation
        ),
    );
}

// ---------------------------------------------------------------- 6

fn causality_verdict(c: &NoiseCurves) -> (bool, String) {
    let dropped: Vec<_> = c
        .points
        .iter()
        .filter(|p| c.clean_accuracy - p.answer_accuracy >= 0.10)
        .collect();
    let violations = dropped.iter().filter(|p| p.answer_accuracy > p.random_accuracy).count();
    let largest = c.points.iter().max_by(|a, b| a.norm.total_cmp(&b.norm)).unwrap();
    let detail = format!(
        "clean {:.1}%, {} of {} norms with a >= 10 point drop, {} violations; at norm {:.3} answer {:.1}% vs random {:.1}% ({} trials, {} examples, dimension {})",
        100.0 * c.clean_accuracy,
        dropped.len(),
        c.points.len(),
        violations,
        largest.norm,
        100.0 * largest.answer_accuracy,
        100.0 * largest.random_accuracy,
        c.trials,
        c.examples,
        c.subspace_dim
    );
    if dropped.is_empty() {
        return (
            false,
            format!("no norm lowered answer-subspace accuracy by 10 points; {detail}"),
        );
    }
    (violations == 0, detail)
}

fn criterion_6(gates: &mut Gates, desk: &Desk, teacher: &CompiledTransformer) {
    let test = test_examples(&desk.injected, 10);
    let curves = noise_causality(&desk.injected, teacher, &test, &NoiseConfig::default()).unwrap();
    for p in &curves.points {
        eprintln!(
            "  norm {:>9.4}  answer {:.3}  random {:.3}",
            p.norm, p.answer_accuracy, p.random_accuracy
        );
    }
    let (ok, detail) = causality_verdict(&curves);
    gates.report("6", "causality gap", false, ok, &detail);
}

// ---------------------------------------------------------------- 7

fn criterion_7(gates: &mut Gates, desk: &Desk, teacher: &CompiledTransformer) {
    let mut failures = Vec::new();
    let mut checked = Vec::new();
    let n = 1000;
    for task in Task::ALL {
        let compiled = if task == Task::Count {
            teacher.clone()
        } else {
            task.spec().unwrap().compile().unwrap()
        };
        let (injected, baseline) = if task == Task::Count {
            (Some(&desk.injected.student), Some(&desk.baseline.student))
        } else {
            (None, None)
        };
        let report = ood_suite(task, &compiled, &desk.injected.tokenizer, injected, baseline, n, 42).unwrap();
        for line in render_ood(&report).lines() {
            println!("    {line}");
        }
        for row in report.rows.iter().filter(|r| r.teacher_supported) {
            checked.push(format!("{} {}/{}", row.setting, row.teacher.correct, row.teacher.total));
        }
        failures.extend(
            report
                .teacher_failures()
                .iter()
                .map(|r| format!("{task} {}", r.setting)),
        );
    }
    gates.report(
        "7",
        "o.o.d. report, teacher exact on supported settings",
        true,
        failures.is_empty(),
        &format!("teacher: {}", checked.join(", ")),
    );
}

// ---------------------------------------------------------------- 8

fn inject(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_inject"))
        .args(args)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Vec<String> {
    names
        .iter()
        .filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok())
        .map(|n| n.to_string())
        .collect()
}

fn criterion_8(gates: &mut Gates) {
    let dir = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    let mut ran = true;
    for name in ["a", "b"] {
        let root = dir.path().join(name);
        std::fs::create_dir_all(&root).unwrap();
        let student = root.join("student.json");
        let s = student.to_str().unwrap();
        ran &= inject(&[
            "pretrain-student",
            "--layers",
            "2",
            "--width",
            "128",
            "--heads",
            "2",
            "--steps",
            "3",
            "--out",
            s,
        ]);
        for (run, extra) in [("run", None), ("baseline", Some("--baseline"))] {
            let out = root.join(run);
            let mut args = vec![
                "train",
                "count",
                "--student",
                s,
                "--steps",
                "3",
                "--task-batch",
                "3",
                "--text-batch",
                "3",
                "--checkpoint-every",
                "2",
                "--out",
                out.to_str().unwrap(),
            ];
            args.extend(extra);
            ran &= inject(&args);
        }
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    differing.extend(same_files(&a, &b, &["student.json", "student.manifest.json"]));
    for run in ["run", "baseline"] {
        differing.extend(
            same_files(
                &a.join(run),
                &b.join(run),
                &["manifest.json", "losses.jsonl", "checkpoint.json"],
            )
            .into_iter()
            .map(|f| format!("{run}/{f}")),
        );
    }
    let ok = ran && differing.is_empty();
    let detail = if ok {
        "pre-training, injection and baseline runs repeated with seed 42: manifests, loss streams and checkpoints byte-identical".to_string()
    } else {
        format!("commands succeeded: {ran}; differing files: {differing:?}")
    };
    gates.report("8", "reproducibility", true, ok, &detail);
}

fn main() {
    // `cargo test -- --list` and filters pass arguments; run nothing then.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut gates = Gates {
        hard_failures: Vec::new(),
    };
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let selected = |id: &str| {
        let run = only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
        if !run {
            println!("[SKIP] criterion {id}");
        }
        run
    };
    if selected("1") {
        criterion_1(&mut gates);
    }
    if selected("2") {
        criterion_2(&mut gates);
    }
    if selected("3") {
        criterion_3(&mut gates);
    }
    if selected("4") {
        criterion_4(&mut gates);
    }
    let (run5, run6, run7) = (selected("5"), selected("6"), selected("7"));
    if run5 || run6 || run7 {
        let teacher = Task::Count.spec().unwrap().compile().unwrap();
        let desk = desk(&teacher);
        if run5 {
            criterion_5(&mut gates, &desk, &teacher);
        }
        if run6 {
            criterion_6(&mut gates, &desk, &teacher);
        }
        if run7 {
            criterion_7(&mut gates, &desk, &teacher);
        }
    }
    if selected("8") {
        criterion_8(&mut gates);
    }
    if gates.hard_failures.is_empty() {
        println!("acceptance: all hard gates pass");
    } else {
        println!("acceptance: hard gates failed: {}", gates.hard_failures.join(", "));
        std::process::exit(1);
    }
}
