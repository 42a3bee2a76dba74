//! JSON document form of a program. Tables are written out as explicit
//! value rows so the file is readable without the builder closures.

use serde::{Deserialize, Serialize};

use crate::{Node, NodeKind, Program, RaspError, Value};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ProgramDoc {
    version: u32,
    name: String,
    vocabulary: Vec<String>,
    bos: String,
    max_seq_len: usize,
    causal: bool,
    output: String,
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: usize,
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    domain: Vec<Value>,
    /// map: [x, f(x)]; zip_map: [x, y, f(x,y)]; select: [key, query, bool].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    table: Vec<Vec<Value>>,
}

pub fn to_json(p: &Program) -> String {
    serde_json::to_string_pretty(&to_value(p)).expect("program serializes")
}

pub fn to_value(p: &Program) -> serde_json::Value {
    let nodes = p
        .nodes
        .iter()
        .enumerate()
        .map(|(id, n)| {
            let dom = |i: usize| &p.nodes[i].domain;
            let table = match &n.kind {
                NodeKind::Tokens | NodeKind::Indices | NodeKind::Count { .. } => vec![],
                NodeKind::Map { input, table } => dom(*input)
                    .iter()
                    .zip(table)
                    .map(|(x, &o)| vec![x.clone(), n.domain[o].clone()])
                    .collect(),
                NodeKind::ZipMap { x, y, table } => {
                    let ny = dom(*y).len();
                    table
                        .iter()
                        .enumerate()
                        .map(|(i, &o)| vec![dom(*x)[i / ny].clone(), dom(*y)[i % ny].clone(), n.domain[o].clone()])
                        .collect()
                }
                NodeKind::Select { keys, queries, table } => {
                    let nq = dom(*queries).len();
                    table
                        .iter()
                        .enumerate()
                        .map(|(i, &b)| {
                            vec![
                                dom(*keys)[i / nq].clone(),
                                dom(*queries)[i % nq].clone(),
                                Value::Bool(b),
                            ]
                        })
                        .collect()
                }
            };
            NodeDoc {
                id,
                name: n.name.clone(),
                kind: n.kind.label().to_string(),
                inputs: n.kind.inputs(),
                domain: n.domain.clone(),
                table,
            }
        })
        .collect();
    let doc = ProgramDoc {
        version: FORMAT_VERSION,
        name: p.name.clone(),
        vocabulary: p.vocabulary.clone(),
        bos: p.bos.clone(),
        max_seq_len: p.max_seq_len,
        causal: p.causal,
        output: p.nodes[p.output].name.clone(),
        nodes,
    };
    serde_json::to_value(&doc).expect("program serializes")
}

pub fn from_json(s: &str) -> Result<Program, RaspError> {
    let v: serde_json::Value = serde_json::from_str(s).map_err(|e| RaspError::Json(e.to_string()))?;
    from_value(v)
}

pub fn from_value(v: serde_json::Value) -> Result<Program, RaspError> {
    let doc: ProgramDoc = serde_json::from_value(v).map_err(|e| RaspError::Json(e.to_string()))?;
    if doc.version != FORMAT_VERSION {
        return Err(RaspError::Json(format!("unsupported version {}", doc.version)));
    }
    let mut nodes: Vec<Node> = Vec::with_capacity(doc.nodes.len());
    for (pos, nd) in doc.nodes.iter().enumerate() {
        if nd.id != pos {
            return Err(RaspError::Json(format!("node ids must be sequential, got {}", nd.id)));
        }
        if nd.inputs.iter().any(|&i| i >= pos) {
            return Err(RaspError::Cycle(nd.name.clone()));
        }
        let input = |k: usize| -> Result<usize, RaspError> {
            nd.inputs
                .get(k)
                .copied()
                .ok_or_else(|| RaspError::Json(format!("{}: missing input {k}", nd.name)))
        };
        let lookup = |domain: &[Value], v: &Value| -> Result<usize, RaspError> {
            domain
                .iter()
                .position(|d| d == v)
                .ok_or_else(|| RaspError::Domain(format!("{}: value {v} not in domain", nd.name)))
        };
        let kind = match nd.kind.as_str() {
            "tokens" => NodeKind::Tokens,
            "indices" => NodeKind::Indices,
            "count" => NodeKind::Count { selector: input(0)? },
            "map" => {
                let x = input(0)?;
                let xd = &nodes[x].domain;
                let mut table = vec![usize::MAX; xd.len()];
                for row in &nd.table {
                    let [a, o] = row.as_slice() else {
                        return Err(RaspError::Json(format!("{}: bad map row", nd.name)));
                    };
                    table[lookup(xd, a)?] = lookup(&nd.domain, o)?;
                }
                NodeKind::Map { input: x, table }
            }
            "zip_map" => {
                let (x, y) = (input(0)?, input(1)?);
                let (xd, yd) = (&nodes[x].domain, &nodes[y].domain);
                let mut table = vec![usize::MAX; xd.len() * yd.len()];
                for row in &nd.table {
                    let [a, b, o] = row.as_slice() else {
                        return Err(RaspError::Json(format!("{}: bad zip_map row", nd.name)));
                    };
                    table[lookup(xd, a)? * yd.len() + lookup(yd, b)?] = lookup(&nd.domain, o)?;
                }
                NodeKind::ZipMap { x, y, table }
            }
            "select" => {
                let (k, q) = (input(0)?, input(1)?);
                let (kd, qd) = (&nodes[k].domain, &nodes[q].domain);
                let mut filled = vec![false; kd.len() * qd.len()];
                let mut table = vec![false; kd.len() * qd.len()];
                for row in &nd.table {
                    let [a, b, Value::Bool(o)] = row.as_slice() else {
                        return Err(RaspError::Json(format!("{}: bad select row", nd.name)));
                    };
                    let i = lookup(kd, a)? * qd.len() + lookup(qd, b)?;
                    table[i] = *o;
                    filled[i] = true;
                }
                if filled.iter().any(|f| !f) {
                    return Err(RaspError::Domain(format!(
                        "{}: predicate not total over key x query domains",
                        nd.name
                    )));
                }
                NodeKind::Select {
                    keys: k,
                    queries: q,
                    table,
                }
            }
            other => return Err(RaspError::Json(format!("unknown node kind {other:?}"))),
        };
        if let NodeKind::Map { table, .. } | NodeKind::ZipMap { table, .. } = &kind {
            if table.contains(&usize::MAX) {
                return Err(RaspError::Domain(format!("{}: function table not total", nd.name)));
            }
        }
        nodes.push(Node {
            name: nd.name.clone(),
            kind,
            domain: nd.domain.clone(),
        });
    }
    let output = nodes
        .iter()
        .position(|n| n.name == doc.output)
        .ok_or_else(|| RaspError::UnknownNode(doc.output.clone()))?;
    let p = Program {
        name: doc.name,
        vocabulary: doc.vocabulary,
        bos: doc.bos,
        max_seq_len: doc.max_seq_len,
        causal: doc.causal,
        nodes,
        output,
    };
    p.validate()?;
    Ok(p)
}
