//! Text and CSV renderings of evaluation results.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Accuracy, EvalError, NoiseCurves, OodReport};

/// One model's in-distribution results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub accuracy: Option<f64>,
    pub perplexity: Option<f64>,
    pub decoding: Option<f64>,
}

fn percent(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{:.1}%", 100.0 * v))
}

fn acc(a: Option<&Accuracy>) -> String {
    match a {
        None => "-".into(),
        Some(a) if a.scored == 0 => "unsupported".into(),
        Some(a) if a.scored < a.total => format!("{} ({}/{})", percent(a.value()), a.scored, a.total),
        Some(a) => percent(a.value()),
    }
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<String>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    writeln!(out, "{}", line(header.iter().map(|h| h.to_string()).collect())).unwrap();
    writeln!(
        out,
        "{}",
        widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ")
    )
    .unwrap();
    for r in rows {
        writeln!(out, "{}", line(r.clone())).unwrap();
    }
    out
}

/// Accuracy, perplexity and decoding accuracy per model.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                percent(r.accuracy),
                r.perplexity.map_or("-".into(), |p| format!("{p:.2}")),
                percent(r.decoding),
            ]
        })
        .collect();
    table(&["model", "accuracy", "perplexity", "decoding"], &body)
}

/// Per-setting accuracy with injected and baseline columns side by side.
pub fn render_ood(report: &OodReport) -> String {
    let body: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.setting.clone(),
                acc(r.injected.as_ref()),
                acc(r.baseline.as_ref()),
                acc(Some(&r.teacher)),
                if r.teacher_supported { "yes" } else { "no" }.into(),
            ]
        })
        .collect();
    format!(
        "{} ({} examples per setting)\n{}",
        report.task,
        report.examples_per_setting,
        table(
            &["setting", "injected", "baseline", "teacher", "teacher-supported"],
            &body
        )
    )
}

fn cell(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

pub fn ood_csv<W: Write>(report: &OodReport, out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "setting",
        "teacher_supported",
        "injected",
        "baseline",
        "teacher",
        "teacher_scored",
        "examples",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.setting.clone(),
            r.teacher_supported.to_string(),
            cell(r.injected.and_then(|a| a.value())),
            cell(r.baseline.and_then(|a| a.value())),
            cell(r.teacher.value()),
            r.teacher.scored.to_string(),
            r.teacher.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn noise_csv<W: Write>(curves: &NoiseCurves, out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["norm", "answer_subspace_accuracy", "random_subspace_accuracy"])?;
    for p in &curves.points {
        w.write_record([
            p.norm.to_string(),
            p.answer_accuracy.to_string(),
            p.random_accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
