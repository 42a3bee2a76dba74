use std::collections::HashMap;
use std::ops::Range;

use rasp_core::{NodeKind, Program, Value};
use serde::{Deserialize, Serialize};

pub const ONE: &str = "<one>";
pub const BOS: &str = "<bos>";
pub const SCRATCH: &str = "<scratch>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisEntry {
    pub variable: String,
    pub value: Value,
    pub dimension: usize,
}

/// Names every residual dimension of a compiled model.
///
/// Layout: the always-on dimension, the beginning-of-sequence flag, the
/// `tokens` and `indices` blocks, every other s-op block in topological
/// order (values in domain order), then one scratch dimension per count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "BasisDoc", into = "BasisDoc")]
pub struct ResidualBasis {
    entries: Vec<BasisEntry>,
    blocks: HashMap<String, Range<usize>>,
    variables: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct BasisDoc {
    entries: Vec<BasisEntry>,
}

impl From<BasisDoc> for ResidualBasis {
    fn from(doc: BasisDoc) -> Self {
        Self::from_entries(doc.entries)
    }
}

impl From<ResidualBasis> for BasisDoc {
    fn from(b: ResidualBasis) -> Self {
        BasisDoc { entries: b.entries }
    }
}

impl ResidualBasis {
    fn from_entries(entries: Vec<BasisEntry>) -> Self {
        let mut blocks: HashMap<String, Range<usize>> = HashMap::new();
        let mut variables = Vec::new();
        for e in &entries {
            match blocks.get_mut(&e.variable) {
                Some(r) => r.end = e.dimension + 1,
                None => {
                    if !e.variable.starts_with('<') {
                        variables.push(e.variable.clone());
                    }
                    blocks.insert(e.variable.clone(), e.dimension..e.dimension + 1);
                }
            }
        }
        Self {
            entries,
            blocks,
            variables,
        }
    }

    pub fn entries(&self) -> &[BasisEntry] {
        &self.entries
    }

    pub fn width(&self) -> usize {
        self.entries.len()
    }

    /// Program variable names in basis order (reserved dimensions excluded).
    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn block(&self, variable: &str) -> Option<Range<usize>> {
        self.blocks.get(variable).cloned()
    }

    pub fn dim(&self, variable: &str, value: &Value) -> Option<usize> {
        let r = self.blocks.get(variable)?;
        self.entries[r.clone()]
            .iter()
            .find(|e| &e.value == value)
            .map(|e| e.dimension)
    }

    pub fn one(&self) -> usize {
        self.dim(ONE, &Value::Null).expect("always-on dimension")
    }

    pub fn bos(&self) -> usize {
        self.dim(BOS, &Value::Null).expect("bos dimension")
    }

    pub fn scratch(&self, count: &str) -> Option<usize> {
        self.dim(SCRATCH, &Value::sym(count))
    }

    /// Values of a variable's block, in dimension order.
    pub fn values(&self, variable: &str) -> Option<Vec<Value>> {
        let r = self.blocks.get(variable)?;
        Some(self.entries[r.clone()].iter().map(|e| e.value.clone()).collect())
    }

    /// Argmax over a variable's block; ties resolve to the lowest
    /// dimension. Returns the index within the block.
    pub fn argmax(&self, variable: &str, vector: &[f64]) -> Option<usize> {
        let r = self.blocks.get(variable)?;
        let block = &vector[r.clone()];
        let mut best = 0;
        for (i, &v) in block.iter().enumerate() {
            if v > block[best] {
                best = i;
            }
        }
        Some(best)
    }
}

/// Allocates the residual basis of a program.
pub fn allocate_basis(program: &Program) -> ResidualBasis {
    let mut entries = Vec::new();
    let mut push = |variable: &str, value: Value| {
        let dimension = entries.len();
        entries.push(BasisEntry {
            variable: variable.to_string(),
            value,
            dimension,
        });
    };
    push(ONE, Value::Null);
    push(BOS, Value::Null);
    for t in &program.vocabulary {
        push("tokens", Value::sym(t));
    }
    for i in 0..program.max_seq_len {
        push("indices", Value::from(i));
    }
    let mut counts = Vec::new();
    for node in &program.nodes {
        match node.kind {
            NodeKind::Tokens | NodeKind::Indices | NodeKind::Select { .. } => continue,
            NodeKind::Count { .. } => counts.push(node.name.clone()),
            _ => {}
        }
        for v in &node.domain {
            push(&node.name, v.clone());
        }
    }
    for c in counts {
        push(SCRATCH, Value::Sym(c));
    }
    ResidualBasis::from_entries(entries)
}
