use serde::{Deserialize, Serialize};

use crate::{NodeId, NodeKind, Program, RaspError, Value};

/// Value of every s-op at every input position (the beginning-of-sequence
/// marker is not part of the trace).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableTrace {
    pub tokens: Vec<String>,
    pub columns: Vec<Column>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub node: NodeId,
    pub name: String,
    pub values: Vec<Value>,
}

impl VariableTrace {
    pub fn get(&self, name: &str) -> Option<&[Value]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }
}

/// Interprets `program` on a token sequence.
pub fn interpret(program: &Program, tokens: &[&str]) -> Result<VariableTrace, RaspError> {
    let ids = program.encode(tokens)?;
    let idx = interpret_indices(program, &ids);
    let columns = program
        .sop_ids()
        .into_iter()
        .map(|id| {
            let node = program.node(id);
            Column {
                node: id,
                name: node.name.clone(),
                values: idx[id].iter().map(|&i| node.domain[i].clone()).collect(),
            }
        })
        .collect();
    Ok(VariableTrace {
        tokens: tokens.iter().map(|s| s.to_string()).collect(),
        columns,
    })
}

/// Interprets on already-encoded token ids, returning domain indices per
/// node (selectors get an empty column). Callers must pass ids from
/// [`Program::encode`]; lengths are not rechecked.
pub fn interpret_indices(program: &Program, ids: &[usize]) -> Vec<Vec<usize>> {
    let n = ids.len();
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(program.nodes.len());
    for node in &program.nodes {
        let col = match &node.kind {
            NodeKind::Tokens => ids.to_vec(),
            NodeKind::Indices => (0..n).collect(),
            NodeKind::Map { input, table } => out[*input].iter().map(|&v| table[v]).collect(),
            NodeKind::ZipMap { x, y, table } => {
                let ny = program.nodes[*y].domain.len();
                out[*x].iter().zip(&out[*y]).map(|(&a, &b)| table[a * ny + b]).collect()
            }
            NodeKind::Select { .. } => Vec::new(),
            NodeKind::Count { selector } => {
                let m = selector_matrix_from(program, &out, *selector, n);
                m.iter().map(|row| row.iter().filter(|&&b| b).count()).collect()
            }
        };
        out.push(col);
    }
    out
}

/// Boolean attention pattern of a selector: `m[q][k]`, with the causal
/// mask applied when the program is causal.
pub fn selector_matrix(program: &Program, tokens: &[&str], selector: NodeId) -> Result<Vec<Vec<bool>>, RaspError> {
    let ids = program.encode(tokens)?;
    let idx = interpret_indices(program, &ids);
    Ok(selector_matrix_from(program, &idx, selector, ids.len()))
}

fn selector_matrix_from(program: &Program, idx: &[Vec<usize>], selector: NodeId, n: usize) -> Vec<Vec<bool>> {
    let NodeKind::Select { keys, queries, table } = &program.nodes[selector].kind else {
        panic!("node {selector} is not a selector");
    };
    let nq = program.nodes[*queries].domain.len();
    (0..n)
        .map(|q| {
            (0..n)
                .map(|k| (!program.causal || k <= q) && table[idx[*keys][k] * nq + idx[*queries][q]])
                .collect()
        })
        .collect()
}
