use rasp_core::{NodeId, Program, ProgramBuilder, RaspError, Value};

use crate::{TaskError, COMPUTE, DIGITS};

/// Two 3-digit operands, "+", the answer marker and a 3-digit answer,
/// plus one spare.
pub const SUM_MAX_SEQ_LEN: usize = 12;

/// Places read per operand.
const PLACES: i64 = 3;

fn int(v: &Value) -> i64 {
    v.as_int().expect("integer value")
}

fn digit_of(t: &Value) -> Option<i64> {
    t.as_sym().filter(|s| s.len() == 1).and_then(|s| s.parse().ok())
}

fn tuple(vals: &[i64]) -> Value {
    Value::Tuple(vals.iter().map(|&v| Value::Int(v)).collect())
}

fn field(v: &Value, i: usize) -> i64 {
    int(&v.as_tuple().expect("tuple value")[i])
}

/// Adds two operands of up to three digits.
///
/// Stages: a count of "+"/"compute" tokens splits the sequence into the two
/// operands and the answer; digit ordinals and operand lengths give every
/// operand digit its place; one head per (place, bit) counts the operand
/// digits at that place with that bit set, which is the bit's contribution
/// to the place's digit sum; feed-forward maps rebuild the digit sums,
/// propagate carries and pick the answer digit for the current answer
/// position.
pub fn integer_sum_program(max_seq_len: usize) -> Result<Program, TaskError> {
    let mut vocab: Vec<&str> = DIGITS.to_vec();
    vocab.push("+");
    vocab.push(COMPUTE);
    let mut b = ProgramBuilder::new("integer_sum", &vocab, max_seq_len);
    let tokens = b.tokens()?;

    let stage_sel = b.select("stage_marks", tokens, tokens, |k, _| {
        matches!(k.as_sym(), Some("+") | Some(COMPUTE))
    })?;
    let stage = b.count("stage", stage_sel)?;
    let operand_digit = b.zip_map("operand_digit", stage, tokens, |s, t| match digit_of(t) {
        Some(d) if int(s) <= 2 => tuple(&[int(s), d]),
        _ => Value::Null,
    })?;

    let same_stage = b.select("same_stage_digits", operand_digit, operand_digit, |k, q| {
        !k.is_null() && !q.is_null() && field(k, 0) == field(q, 0)
    })?;
    let ordinal = b.count("digit_ordinal", same_stage)?;
    let mut lens = Vec::new();
    for (s, name) in [(0, "first_len"), (1, "second_len")] {
        let sel = b.select(&format!("{name}_digits"), operand_digit, operand_digit, move |k, _| {
            !k.is_null() && field(k, 0) == s
        })?;
        lens.push(b.count(name, sel)?);
    }

    let place_key = b.zip_map("place_key", operand_digit, ordinal, |od, o| {
        let o = int(o);
        if od.is_null() || field(od, 0) > 1 || !(1..=PLACES).contains(&o) {
            return Value::Null;
        }
        tuple(&[field(od, 0), o - 1, field(od, 1)])
    })?;
    let operand_lens = b.zip_map("operand_lens", lens[0], lens[1], |a, c| {
        tuple(&[int(a).min(PLACES + 1), int(c).min(PLACES + 1)])
    })?;
    let answer_pos = b.zip_map("answer_pos", stage, ordinal, |s, o| {
        if int(s) == 2 {
            o.clone()
        } else {
            Value::Null
        }
    })?;

    let mut sums: Vec<NodeId> = Vec::new();
    for p in 0..PLACES {
        let mut bits = Vec::new();
        for j in 0..4 {
            let sel = b.select(&format!("place{p}_bit{j}_sel"), place_key, operand_lens, move |k, q| {
                if k.is_null() || q.is_null() {
                    return false;
                }
                let (stage, ord, digit) = (field(k, 0), field(k, 1), field(k, 2));
                ord == field(q, stage as usize) - 1 - p && (digit >> j) & 1 == 1
            })?;
            bits.push(b.count(&format!("place{p}_bit{j}"), sel)?);
        }
        let clamp = |v: &Value| int(v).min(2);
        let lo = b.zip_map(&format!("place{p}_low"), bits[0], bits[1], move |x, y| {
            Value::Int(clamp(x) + 2 * clamp(y))
        })?;
        let hi = b.zip_map(&format!("place{p}_high"), bits[2], bits[3], move |x, y| {
            Value::Int(4 * clamp(x) + 8 * clamp(y))
        })?;
        sums.push(b.zip_map(&format!("place{p}_sum"), lo, hi, |x, y| Value::Int(int(x) + int(y)))?);
    }

    let carry_in = |b: &mut ProgramBuilder, name: &str, lower: NodeId, upper: NodeId| -> Result<NodeId, RaspError> {
        b.zip_map(name, lower, upper, |l, u| Value::Int(int(u) + (int(l) >= 10) as i64))
    };
    let tens_total = carry_in(&mut b, "tens_total", sums[0], sums[1])?;
    let hundreds_total = carry_in(&mut b, "hundreds_total", tens_total, sums[2])?;
    let low_digits = b.zip_map("low_digits", tens_total, sums[0], |t, u| {
        tuple(&[int(t) % 10, int(u) % 10])
    })?;

    // Answer digit pick: a literal digit, the tens ("r1") or units ("r0")
    // digit, or for sums under 100 the leading-zero-aware "lead"/"second".
    let pick = b.zip_map("answer_pick", hundreds_total, answer_pos, |h, pos| {
        if pos.is_null() {
            return Value::Null;
        }
        let h = int(h);
        let plan: Vec<Value> = if h >= 10 {
            vec![
                Value::Int(h / 10),
                Value::Int(h % 10),
                Value::sym("r1"),
                Value::sym("r0"),
            ]
        } else if h > 0 {
            vec![Value::Int(h), Value::sym("r1"), Value::sym("r0")]
        } else {
            vec![Value::sym("lead"), Value::sym("second")]
        };
        plan.get(int(pos) as usize)
            .cloned()
            .unwrap_or_else(|| Value::sym("end"))
    })?;
    let final_result = b.zip_map("final_result", pick, low_digits, |pick, low| {
        let (r1, r0) = (field(low, 0), field(low, 1));
        match pick {
            Value::Int(d) => Value::Int(*d),
            Value::Sym(s) => match s.as_str() {
                "r1" => Value::Int(r1),
                "r0" => Value::Int(r0),
                "lead" => Value::Int(if r1 > 0 { r1 } else { r0 }),
                "second" if r1 > 0 => Value::Int(r0),
                _ => Value::Null,
            },
            _ => Value::Null,
        }
    })?;
    Ok(b.build(final_result)?)
}
