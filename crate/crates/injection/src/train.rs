use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use compiler::CompiledTransformer;
use data::{split, Generator, GeneratorConfig, TextBatches};
use programs::{Encoded, StudentTokenizer, TaskSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use runtime::{clip_global_norm, Adam, Batch, Matrix, StudentModel, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::{
    default_layer_map, subspace_projector, validate_layer_map, InjectionCheckpoint, InjectionError, LinearBridge,
    LossWeights, CHECKPOINT_VERSION,
};

/// Token used to right-pad task sequences to a common length. Padding
/// follows every real token, so causal attention never reads it at a
/// supervised or aligned position.
pub const PAD_ID: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub student_lr: f64,
    pub bridge_lr: f64,
    pub task_batch: usize,
    pub text_batch: usize,
    pub text_window: usize,
    pub seed: u64,
    /// Student checkpoint per compiled checkpoint; identity when absent.
    pub layer_map: Option<Vec<usize>>,
    pub intervention: bool,
    /// Fine-tuning with retention only: no alignment term, no intervention.
    pub baseline: bool,
    pub weights: LossWeights,
    /// One bridge per compiled checkpoint instead of a shared one.
    pub per_layer_bridge: bool,
    pub clip_norm: f64,
    /// Held-out task examples excluded from the training stream.
    pub test_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 80_000,
            student_lr: 1e-4,
            bridge_lr: 1e-4,
            task_batch: 12,
            text_batch: 12,
            text_window: 70,
            seed: 42,
            layer_map: None,
            intervention: true,
            baseline: false,
            weights: LossWeights::default(),
            per_layer_bridge: false,
            clip_norm: 1.0,
            test_size: 1000,
        }
    }
}

impl TrainConfig {
    /// Weights actually applied: the baseline drops the alignment term.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            beta: if self.baseline { 0.0 } else { self.weights.beta },
            ..self.weights
        }
    }

    pub fn intervention_active(&self) -> bool {
        self.intervention && !self.baseline
    }

    pub fn data_config(&self, spec: &TaskSpec) -> GeneratorConfig {
        GeneratorConfig {
            test_size: self.test_size,
            ..GeneratorConfig::new(spec.task, self.seed)
        }
    }
}

/// Loss values of one optimization step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub l_ce: f64,
    pub l_alg: f64,
    pub l_kl: f64,
    pub total: f64,
    pub grad_norm: f64,
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub spec: TaskSpec,
    pub tokenizer: StudentTokenizer,
    pub student: StudentModel,
    pub bridge: LinearBridge,
    pub step: usize,
    teacher: &'a CompiledTransformer,
    reference: StudentModel,
    layer_map: Vec<usize>,
    adam: Adam,
    tasks: Generator,
    text: Option<TextBatches>,
}

impl<'a> Trainer<'a> {
    /// Sets up a run; the student as passed in becomes the frozen
    /// retention reference.
    pub fn new(
        config: TrainConfig,
        spec: TaskSpec,
        teacher: &'a CompiledTransformer,
        tokenizer: StudentTokenizer,
        student: StudentModel,
        text_corpus: &str,
    ) -> Result<Self, InjectionError> {
        config.weights.validate()?;
        if config.task_batch == 0 {
            return Err(InjectionError::Config("task batch must be at least 1".into()));
        }
        if student.config.vocab_size != tokenizer.len() {
            return Err(InjectionError::Config(format!(
                "student vocabulary {} differs from tokenizer {}",
                student.config.vocab_size,
                tokenizer.len()
            )));
        }
        let k = teacher.layers();
        let layer_map = config.layer_map.clone().unwrap_or_else(|| default_layer_map(k));
        validate_layer_map(&layer_map, k, student.config.layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x00b8_1d9e);
        let count = if config.per_layer_bridge { k + 1 } else { 1 };
        let bridge = LinearBridge::init(student.config.width, teacher.width(), count, &mut rng)?;
        let (_, tasks) = split(&config.data_config(&spec))?;
        let text = if config.text_batch > 0 && config.weights.gamma > 0.0 {
            Some(TextBatches::new(
                &tokenizer,
                text_corpus,
                config.text_window,
                config.text_batch,
                config.seed.wrapping_add(1),
            )?)
        } else {
            None
        };
        let mut shapes: Vec<(usize, usize)> = student.params().iter().map(|m| m.shape()).collect();
        shapes.extend(bridge.maps.iter().map(|m| m.shape()));
        Ok(Self {
            reference: student.clone(),
            adam: Adam::new(&shapes),
            config,
            spec,
            tokenizer,
            student,
            bridge,
            step: 0,
            teacher,
            layer_map,
            tasks,
            text,
        })
    }

    pub fn layer_map(&self) -> &[usize] {
        &self.layer_map
    }

    /// Continues from a saved checkpoint's student and bridge. Optimizer
    /// moments restart from zero.
    pub fn resume(&mut self, ckpt: &InjectionCheckpoint) -> Result<(), InjectionError> {
        if ckpt.student.config != self.student.config || ckpt.bridge.maps.len() != self.bridge.maps.len() {
            return Err(InjectionError::Config("checkpoint shape differs from this run".into()));
        }
        self.student = ckpt.student.clone();
        self.bridge = ckpt.bridge.clone();
        self.step = ckpt.step;
        for _ in 0..ckpt.step {
            self.tasks.take(self.config.task_batch)?;
            if let Some(t) = self.text.as_mut() {
                t.next_batch();
            }
        }
        Ok(())
    }

    fn encode_batch(&mut self) -> Result<Vec<Encoded>, InjectionError> {
        let examples = self.tasks.take(self.config.task_batch)?;
        examples
            .iter()
            .map(|e| Ok(self.spec.encode(&self.tokenizer, &e.input, &e.answer)?))
            .collect()
    }

    /// One optimization step on a fresh task batch and text batch.
    pub fn train_step(&mut self) -> Result<LossReport, InjectionError> {
        let encs = self.encode_batch()?;
        let weights = self.config.effective_weights();
        let k = self.teacher.layers();

        let len = encs.iter().map(|e| e.student_ids.len()).max().unwrap_or(0);
        let seqs: Vec<Vec<usize>> = encs
            .iter()
            .map(|e| {
                let mut s = e.student_ids.clone();
                s.resize(len, PAD_ID);
                s
            })
            .collect();
        let batch = Batch::new(&seqs);

        let mut tape = Tape::new();
        let bridge_vars: Vec<Var> = self.bridge.maps.iter().map(|m| tape.param(m)).collect();
        let projector = if self.config.intervention_active() {
            Some(Arc::new(subspace_projector(self.bridge.map(k))?))
        } else {
            None
        };
        let roll_at = self.layer_map[k];
        let n_seqs = seqs.len();
        let task = self
            .student
            .forward_tape(&mut tape, &batch, &mut |t, i, h| match &projector {
                Some(p) if i == roll_at => t.roll(h, p.clone(), n_seqs),
                _ => h,
            })?;

        let targets: Vec<(usize, usize)> = encs
            .iter()
            .enumerate()
            .flat_map(|(b, e)| e.supervised.iter().map(move |&(p, label)| (b, p, label)))
            .map(|(b, p, label)| (batch.row(b, p), label))
            .collect();
        if targets.is_empty() {
            return Err(InjectionError::EmptySupervision);
        }
        let ce = tape.cross_entropy(task.logits, &targets);

        // Alignment: teacher traces on the projected sequences.
        let mut rows = Vec::new();
        let mut teacher_rows: Vec<Vec<usize>> = Vec::new();
        let mut traces = Vec::with_capacity(encs.len());
        for (b, e) in encs.iter().enumerate() {
            let toks: Vec<&str> = e.teacher_tokens.iter().map(String::as_str).collect();
            traces.push(self.teacher.forward(&toks)?.trace);
            let pairs = e.aligned_pairs();
            rows.extend(pairs.iter().map(|&(s, _)| batch.row(b, s)));
            teacher_rows.push(pairs.iter().map(|&(_, t)| t).collect());
        }
        let n_terms = ((k + 1) * rows.len()).max(1) as f64;
        let mut alg_terms = Vec::with_capacity(k + 1);
        for i in 0..=k {
            let mut target = Matrix::zeros(rows.len(), self.teacher.width());
            let mut r = 0;
            for (trace, ts) in traces.iter().zip(&teacher_rows) {
                for &t in ts {
                    target.row_mut(r).copy_from_slice(trace.vector(i, t));
                    r += 1;
                }
            }
            let h = tape.gather_rows(task.checkpoints[self.layer_map[i]], &rows);
            let w = bridge_vars[if self.bridge.shared() { 0 } else { i }];
            let mapped = tape.matmul_nt(h, w);
            let c = tape.cosine_loss(mapped, target);
            alg_terms.push((c, 1.0 / n_terms));
        }
        let alg = tape.weighted_sum(&alg_terms);

        let mut text_graph = None;
        let kl = match self.text.as_mut() {
            Some(text) => {
                let windows = text.next_batch();
                let reference: Vec<Matrix> = self.reference.logits(&windows, windows.len())?;
                let mut ref_logits = Matrix::zeros(0, self.student.config.vocab_size);
                for m in reference {
                    ref_logits.rows += m.rows;
                    ref_logits.data.extend(m.data);
                }
                let g = self
                    .student
                    .forward_tape(&mut tape, &Batch::new(&windows), &mut |_, _, h| h)?;
                let all: Vec<usize> = (0..ref_logits.rows).collect();
                let kl = tape.kl_div(g.logits, &ref_logits, &all);
                text_graph = Some(g);
                kl
            }
            None => tape.constant(Matrix::scalar(0.0)),
        };

        let total = tape.weighted_sum(&[(ce, weights.alpha), (alg, weights.beta), (kl, weights.gamma)]);
        let report = LossReport {
            step: self.step,
            l_ce: tape.scalar(ce),
            l_alg: tape.scalar(alg),
            l_kl: tape.scalar(kl),
            total: tape.scalar(total),
            grad_norm: 0.0,
        };
        if !report.total.is_finite() {
            return Err(InjectionError::Diverged {
                step: self.step,
                total: report.total,
            });
        }

        let grads = tape.backward(total);
        let mut all_grads: Vec<Matrix> = Vec::new();
        for (j, m) in self.student.params().iter().enumerate() {
            let mut g = grads.get_or_zeros(task.params[j], m.rows, m.cols);
            if let Some(tg) = &text_graph {
                if let Some(extra) = grads.get(tg.params[j]) {
                    g.add_assign(extra);
                }
            }
            all_grads.push(g);
        }
        for (v, m) in bridge_vars.iter().zip(&self.bridge.maps) {
            all_grads.push(grads.get_or_zeros(*v, m.rows, m.cols));
        }
        let grad_norm = clip_global_norm(&mut all_grads, self.config.clip_norm);
        if !grad_norm.is_finite() {
            return Err(InjectionError::Diverged {
                step: self.step,
                total: grad_norm,
            });
        }
        let n_student = self.student.params().len();
        let mut lrs = vec![self.config.student_lr; n_student];
        lrs.extend(std::iter::repeat_n(self.config.bridge_lr, self.bridge.maps.len()));
        let mut params: Vec<&mut Matrix> = self.student.params_mut();
        params.extend(self.bridge.maps.iter_mut());
        self.adam.update(&mut params, &all_grads, &lrs);
        self.step += 1;
        Ok(LossReport { grad_norm, ..report })
    }

    pub fn checkpoint(&self) -> InjectionCheckpoint {
        InjectionCheckpoint {
            version: CHECKPOINT_VERSION,
            task: self.spec.task,
            step: self.step,
            config: self.config.clone(),
            layer_map: self.layer_map.clone(),
            tokenizer: self.tokenizer.clone(),
            student: self.student.clone(),
            bridge: self.bridge.clone(),
        }
    }

    /// Runs `steps` steps, appending each report to `out/losses.jsonl` and
    /// writing `out/checkpoint.json` every `checkpoint_every` steps and at
    /// the end.
    pub fn run(
        &mut self,
        steps: usize,
        out: Option<&Path>,
        checkpoint_every: usize,
        mut on_report: impl FnMut(&LossReport),
    ) -> Result<Vec<LossReport>, InjectionError> {
        let mut log = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join("losses.jsonl"))?;
                Some(std::io::BufWriter::new(f))
            }
            None => None,
        };
        let mut reports = Vec::with_capacity(steps);
        for _ in 0..steps {
            let r = self.train_step()?;
            if let Some(w) = log.as_mut() {
                serde_json::to_writer(&mut *w, &r)?;
                w.write_all(b"\n")?;
            }
            on_report(&r);
            reports.push(r);
            if let (Some(dir), true) = (out, checkpoint_every > 0 && self.step.is_multiple_of(checkpoint_every)) {
                if let Some(w) = log.as_mut() {
                    w.flush()?;
                }
                self.checkpoint().save(&dir.join("checkpoint.json"))?;
            }
        }
        if let Some(dir) = out {
            if let Some(w) = log.as_mut() {
                w.flush()?;
            }
            self.checkpoint().save(&dir.join("checkpoint.json"))?;
        }
        Ok(reports)
    }
}
