use rasp_core::{Program, ProgramBuilder, Value};

use crate::{TaskError, COMPUTE, DIGITS};

/// 40 letters, the answer marker and two answer digits, plus one spare.
pub const COUNT_MAX_SEQ_LEN: usize = 44;

/// Counts "x" tokens. The output at "compute" is the leading digit of the
/// count; at a copied answer digit that is the tens digit of a count of
/// ten or more it is the units digit; elsewhere it is none.
pub fn count_program(max_seq_len: usize) -> Result<Program, TaskError> {
    let mut vocab = vec!["x", "y", "z"];
    vocab.extend(DIGITS);
    vocab.push(COMPUTE);
    let mut b = ProgramBuilder::new("count_x", &vocab, max_seq_len);
    let tokens = b.tokens()?;
    let is_x = b.select("is_x", tokens, tokens, |k, _| *k == Value::sym("x"))?;
    let x_count = b.count("x_count", is_x)?;
    let mut domain: Vec<Value> = (0..10).map(Value::Int).collect();
    domain.push(Value::Null);
    domain.sort();
    let final_result = b.zip_map_into(
        "final_result",
        x_count,
        tokens,
        |c, t| {
            let c = c.as_int().unwrap();
            let t = t.as_sym().unwrap();
            if t == COMPUTE {
                let lead = if c >= 10 { c / 10 % 10 } else { c };
                return Value::Int(lead);
            }
            match t.parse::<i64>() {
                Ok(d) if c >= 10 && d == c / 10 % 10 => Value::Int(c % 10),
                _ => Value::Null,
            }
        },
        domain,
    )?;
    Ok(b.build(final_result)?)
}
