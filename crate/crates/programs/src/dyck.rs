use rasp_core::{NodeId, Program, ProgramBuilder, RaspError, Value};

use crate::{TaskError, COMPUTE};

/// Longest compiled prompt: 30 parentheses plus the answer marker, with
/// one spare position.
pub const DYCK_MAX_SEQ_LEN: usize = 32;

fn family_label(pair: &str, i: usize) -> String {
    match pair {
        "()" => "paren".into(),
        "{}" => "brace".into(),
        "[]" => "bracket".into(),
        _ => format!("family{i}"),
    }
}

/// Splits "()"-style family strings into (left, right) symbols.
pub fn parse_pairs(pairs: &[&str]) -> Result<Vec<(String, String)>, TaskError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for p in pairs {
        let cs: Vec<char> = p.chars().collect();
        let [l, r] = cs[..] else {
            return Err(TaskError::BadFamily(p.to_string()));
        };
        let (l, r) = (l.to_string(), r.to_string());
        if l == r || out.iter().any(|(a, b)| [a, b].contains(&&l) || [a, b].contains(&&r)) {
            return Err(TaskError::BadFamily(p.to_string()));
        }
        out.push((l, r));
    }
    if out.is_empty() {
        return Err(TaskError::BadFamily(String::new()));
    }
    Ok(out)
}

fn int(v: &Value) -> i64 {
    v.as_int().expect("integer value")
}

fn either_nonzero(b: &mut ProgramBuilder, name: &str, x: NodeId, y: NodeId) -> Result<NodeId, RaspError> {
    b.zip_map(name, x, y, |x, y| Value::Int((int(x) != 0 || int(y) != 0) as i64))
}

/// Shuffle-Dyck recognizer: per family start/end counts and their
/// difference, a count of positions where the difference went negative,
/// OR-aggregation over families, and the verdict read at "compute".
pub fn shuffle_dyck_program(pairs: &[&str], max_seq_len: usize) -> Result<Program, TaskError> {
    let families = parse_pairs(pairs)?;
    let mut vocab: Vec<&str> = Vec::new();
    for (l, r) in &families {
        vocab.push(l);
        vocab.push(r);
    }
    vocab.push(COMPUTE);
    let mut b = ProgramBuilder::new("shuffle_dyck", &vocab, max_seq_len);
    let tokens = b.tokens()?;
    let mut all_diffs = Vec::new();
    let mut all_negs = Vec::new();
    for (i, (l, r)) in families.iter().enumerate() {
        let label = family_label(&format!("{l}{r}"), i);
        let (lv, rv) = (Value::sym(l), Value::sym(r));
        let starts = b.select(&format!("{label}_starts"), tokens, tokens, move |k, _| *k == lv)?;
        let start_counts = b.count(&format!("{label}_start_counts"), starts)?;
        let ends = b.select(&format!("{label}_ends"), tokens, tokens, move |k, _| *k == rv)?;
        let end_counts = b.count(&format!("{label}_end_counts"), ends)?;
        let diffs = b.zip_map(&format!("{label}_diffs"), start_counts, end_counts, |x, y| {
            Value::Int(int(x) - int(y))
        })?;
        all_diffs.push(diffs);
        let negs = b.select(&format!("{label}_negs_selector"), diffs, diffs, |k, _| int(k) < 0)?;
        let neg_counts = b.count(&format!("{label}_negative_counters"), negs)?;
        all_negs.push(neg_counts);
    }
    let aggregate = |b: &mut ProgramBuilder, all: &[NodeId], name: &str, step: &str| {
        if all.len() == 1 {
            return b.map(name, all[0], |x| x.clone());
        }
        let mut current = all[0];
        for (i, &next) in all[1..].iter().enumerate() {
            let n = if i + 2 == all.len() {
                name.to_string()
            } else {
                format!("{step}_{}", i + 1)
            };
            current = either_nonzero(b, &n, current, next)?;
        }
        Ok(current)
    };
    let agg_negs = aggregate(&mut b, &all_negs, "aggregated_negatives", "current_negs")?;
    let agg_diffs = aggregate(&mut b, &all_diffs, "aggregated_diffs", "current_diffs")?;
    let unfiltered = b.zip_map("unfiltered_result", agg_negs, agg_diffs, |x, y| {
        Value::Bool(int(x) == 0 && int(y) == 0)
    })?;
    let compute = Value::sym(COMPUTE);
    let final_result = b.zip_map("final_result", unfiltered, tokens, move |x, t| {
        if *t == compute {
            x.clone()
        } else {
            Value::Bool(false)
        }
    })?;
    Ok(b.build(final_result)?)
}

/// Direct shuffle-Dyck membership: every family's running balance stays
/// nonnegative and ends at zero. `None` if a symbol belongs to no family.
pub fn is_shuffle_dyck(s: &str, families: &[(String, String)]) -> Option<bool> {
    let mut bal = vec![0i64; families.len()];
    let mut ok = true;
    for ch in s.chars() {
        let c = ch.to_string();
        let i = families.iter().position(|(l, r)| *l == c || *r == c)?;
        bal[i] += if families[i].0 == c { 1 } else { -1 };
        ok &= bal[i] >= 0;
    }
    Some(ok && bal.iter().all(|&b| b == 0))
}
