use std::collections::{BTreeSet, HashMap};

use crate::{RaspError, Value};

pub type NodeId = usize;

/// Node kinds. Function and predicate tables are stored by domain index:
/// a map table has one output index per input index, a zip-map table is
/// row-major over (x, y), a selector table is row-major over (key, query).
#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Tokens,
    Indices,
    Map {
        input: NodeId,
        table: Vec<usize>,
    },
    ZipMap {
        x: NodeId,
        y: NodeId,
        table: Vec<usize>,
    },
    Select {
        keys: NodeId,
        queries: NodeId,
        table: Vec<bool>,
    },
    Count {
        selector: NodeId,
    },
}

impl NodeKind {
    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            NodeKind::Tokens | NodeKind::Indices => vec![],
            NodeKind::Map { input, .. } => vec![*input],
            NodeKind::ZipMap { x, y, .. } => vec![*x, *y],
            NodeKind::Select { keys, queries, .. } => vec![*keys, *queries],
            NodeKind::Count { selector } => vec![*selector],
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::Tokens => "tokens",
            NodeKind::Indices => "indices",
            NodeKind::Map { .. } => "map",
            NodeKind::ZipMap { .. } => "zip_map",
            NodeKind::Select { .. } => "select",
            NodeKind::Count { .. } => "count",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    /// Ordered value domain. Empty for selectors.
    pub domain: Vec<Value>,
}

impl Node {
    pub fn is_selector(&self) -> bool {
        matches!(self.kind, NodeKind::Select { .. })
    }

    pub fn value_index(&self, v: &Value) -> Option<usize> {
        self.domain.iter().position(|d| d == v)
    }
}

/// A validated RASP program. Nodes are stored in topological order.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub name: String,
    pub vocabulary: Vec<String>,
    pub bos: String,
    pub max_seq_len: usize,
    pub causal: bool,
    pub nodes: Vec<Node>,
    pub output: NodeId,
}

impl Program {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Ids of every s-op (non-selector node), in topological order.
    pub fn sop_ids(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| !self.nodes[i].is_selector())
            .collect()
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.vocabulary.iter().position(|t| t == token)
    }

    /// Vocabulary including the beginning-of-sequence marker, which is
    /// always first.
    pub fn full_vocabulary(&self) -> Vec<String> {
        std::iter::once(self.bos.clone())
            .chain(self.vocabulary.iter().cloned())
            .collect()
    }

    pub fn encode(&self, tokens: &[&str]) -> Result<Vec<usize>, RaspError> {
        if tokens.len() > self.max_seq_len {
            return Err(RaspError::TooLong {
                len: tokens.len(),
                max: self.max_seq_len,
            });
        }
        tokens
            .iter()
            .enumerate()
            .map(|(position, t)| {
                self.token_index(t).ok_or_else(|| RaspError::UnknownToken {
                    token: t.to_string(),
                    position,
                })
            })
            .collect()
    }

    /// Structural validation: ids in range and topologically ordered, kinds
    /// wired to the right node types, tables total over their domains,
    /// names unique, sources only `tokens`/`indices`.
    pub fn validate(&self) -> Result<(), RaspError> {
        if self.vocabulary.is_empty() {
            return Err(RaspError::Domain("empty vocabulary".into()));
        }
        if self.vocabulary.contains(&self.bos) {
            return Err(RaspError::Domain(format!(
                "bos marker {:?} also used as an input token",
                self.bos
            )));
        }
        let mut seen = BTreeSet::new();
        for t in &self.vocabulary {
            if !seen.insert(t) {
                return Err(RaspError::Domain(format!("duplicate token {t:?}")));
            }
        }
        if self.max_seq_len == 0 {
            return Err(RaspError::Domain("max_seq_len must be positive".into()));
        }
        let mut names = HashMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if names.insert(node.name.as_str(), id).is_some() {
                return Err(RaspError::DuplicateName(node.name.clone()));
            }
            for input in node.kind.inputs() {
                if input >= id {
                    return Err(RaspError::Cycle(node.name.clone()));
                }
            }
            let sop = |i: NodeId| -> Result<&Node, RaspError> {
                let n = &self.nodes[i];
                if n.is_selector() {
                    Err(RaspError::NotAnSop(n.name.clone()))
                } else {
                    Ok(n)
                }
            };
            let dom = node.domain.len();
            let check_idx = |t: &[usize]| -> Result<(), RaspError> {
                match t.iter().find(|&&o| o >= dom) {
                    Some(_) => Err(RaspError::Domain(format!(
                        "{}: function output outside declared domain",
                        node.name
                    ))),
                    None => Ok(()),
                }
            };
            match &node.kind {
                NodeKind::Tokens => {
                    let expect: Vec<Value> = self.vocabulary.iter().map(Value::sym).collect();
                    if node.domain != expect {
                        return Err(RaspError::Domain("tokens domain must equal vocabulary".into()));
                    }
                }
                NodeKind::Indices => {
                    let expect: Vec<Value> = (0..self.max_seq_len).map(Value::from).collect();
                    if node.domain != expect {
                        return Err(RaspError::Domain("indices domain must be 0..max_seq_len".into()));
                    }
                }
                NodeKind::Map { input, table } => {
                    let x = sop(*input)?;
                    if table.len() != x.domain.len() {
                        return Err(RaspError::Domain(format!("{}: map table not total", node.name)));
                    }
                    check_idx(table)?;
                }
                NodeKind::ZipMap { x, y, table } => {
                    let (xn, yn) = (sop(*x)?, sop(*y)?);
                    if table.len() != xn.domain.len() * yn.domain.len() {
                        return Err(RaspError::Domain(format!("{}: zip_map table not total", node.name)));
                    }
                    check_idx(table)?;
                }
                NodeKind::Select { keys, queries, table } => {
                    let (k, q) = (sop(*keys)?, sop(*queries)?);
                    if table.len() != k.domain.len() * q.domain.len() {
                        return Err(RaspError::Domain(format!(
                            "{}: predicate not total over key x query domains",
                            node.name
                        )));
                    }
                    if !node.domain.is_empty() {
                        return Err(RaspError::Domain(format!("{}: selector has a domain", node.name)));
                    }
                }
                NodeKind::Count { selector } => {
                    if !self.nodes[*selector].is_selector() {
                        return Err(RaspError::NotASelector(self.nodes[*selector].name.clone()));
                    }
                    let expect: Vec<Value> = (0..=self.max_seq_len).map(Value::from).collect();
                    if node.domain != expect {
                        return Err(RaspError::Domain(format!(
                            "{}: count domain must be 0..=max_seq_len",
                            node.name
                        )));
                    }
                }
            }
            if !node.is_selector() && node.domain.is_empty() {
                return Err(RaspError::Domain(format!("{}: empty domain", node.name)));
            }
            let distinct: BTreeSet<&Value> = node.domain.iter().collect();
            if distinct.len() != node.domain.len() {
                return Err(RaspError::Domain(format!("{}: repeated domain value", node.name)));
            }
        }
        match self.nodes.get(self.output) {
            Some(n) if !n.is_selector() => Ok(()),
            Some(n) => Err(RaspError::NotAnSop(n.name.clone())),
            None => Err(RaspError::UnknownNode(format!("#{}", self.output))),
        }
    }
}

/// Incremental program construction. Every operation enumerates its
/// input domains immediately, so each s-op gets a finite domain at
/// creation time.
pub struct ProgramBuilder {
    name: String,
    vocabulary: Vec<String>,
    bos: String,
    max_seq_len: usize,
    causal: bool,
    nodes: Vec<Node>,
}

impl ProgramBuilder {
    pub fn new(name: &str, vocabulary: &[&str], max_seq_len: usize) -> Self {
        Self {
            name: name.to_string(),
            vocabulary: vocabulary.iter().map(|s| s.to_string()).collect(),
            bos: "<bos>".to_string(),
            max_seq_len,
            causal: true,
            nodes: Vec::new(),
        }
    }

    pub fn causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    pub fn domain(&self, id: NodeId) -> &[Value] {
        &self.nodes[id].domain
    }

    fn push(&mut self, name: &str, kind: NodeKind, domain: Vec<Value>) -> Result<NodeId, RaspError> {
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(RaspError::DuplicateName(name.to_string()));
        }
        self.nodes.push(Node {
            name: name.to_string(),
            kind,
            domain,
        });
        Ok(self.nodes.len() - 1)
    }

    fn sop(&self, id: NodeId) -> Result<&Node, RaspError> {
        let n = self
            .nodes
            .get(id)
            .ok_or_else(|| RaspError::UnknownNode(format!("#{id}")))?;
        if n.is_selector() {
            return Err(RaspError::NotAnSop(n.name.clone()));
        }
        Ok(n)
    }

    pub fn tokens(&mut self) -> Result<NodeId, RaspError> {
        if let Some(id) = self.nodes.iter().position(|n| n.kind == NodeKind::Tokens) {
            return Ok(id);
        }
        let domain = self.vocabulary.iter().map(Value::sym).collect();
        self.push("tokens", NodeKind::Tokens, domain)
    }

    pub fn indices(&mut self) -> Result<NodeId, RaspError> {
        if let Some(id) = self.nodes.iter().position(|n| n.kind == NodeKind::Indices) {
            return Ok(id);
        }
        let domain = (0..self.max_seq_len).map(Value::from).collect();
        self.push("indices", NodeKind::Indices, domain)
    }

    /// Elementwise map; the output domain is the sorted image.
    pub fn map(&mut self, name: &str, input: NodeId, f: impl Fn(&Value) -> Value) -> Result<NodeId, RaspError> {
        let outs: Vec<Value> = self.sop(input)?.domain.iter().map(&f).collect();
        let domain = sorted_image(&outs);
        self.map_into(name, input, f, domain)
    }

    /// Elementwise map into an explicitly declared domain.
    pub fn map_into(
        &mut self,
        name: &str,
        input: NodeId,
        f: impl Fn(&Value) -> Value,
        domain: Vec<Value>,
    ) -> Result<NodeId, RaspError> {
        let outs: Vec<Value> = self.sop(input)?.domain.iter().map(&f).collect();
        let table = index_into(name, &outs, &domain)?;
        self.push(name, NodeKind::Map { input, table }, domain)
    }

    pub fn zip_map(
        &mut self,
        name: &str,
        x: NodeId,
        y: NodeId,
        f: impl Fn(&Value, &Value) -> Value,
    ) -> Result<NodeId, RaspError> {
        let outs = self.zip_outputs(x, y, &f)?;
        let domain = sorted_image(&outs);
        self.zip_map_into(name, x, y, f, domain)
    }

    pub fn zip_map_into(
        &mut self,
        name: &str,
        x: NodeId,
        y: NodeId,
        f: impl Fn(&Value, &Value) -> Value,
        domain: Vec<Value>,
    ) -> Result<NodeId, RaspError> {
        let outs = self.zip_outputs(x, y, &f)?;
        let table = index_into(name, &outs, &domain)?;
        self.push(name, NodeKind::ZipMap { x, y, table }, domain)
    }

    fn zip_outputs(&self, x: NodeId, y: NodeId, f: &impl Fn(&Value, &Value) -> Value) -> Result<Vec<Value>, RaspError> {
        let xd = &self.sop(x)?.domain;
        let yd = &self.sop(y)?.domain;
        Ok(xd.iter().flat_map(|a| yd.iter().map(move |b| f(a, b))).collect())
    }

    /// Selector: entry (q, k) is `predicate(key value at k, query value at q)`.
    pub fn select(
        &mut self,
        name: &str,
        keys: NodeId,
        queries: NodeId,
        predicate: impl Fn(&Value, &Value) -> bool,
    ) -> Result<NodeId, RaspError> {
        let kd = &self.sop(keys)?.domain;
        let qd = &self.sop(queries)?.domain;
        let table = kd
            .iter()
            .flat_map(|k| qd.iter().map(|q| predicate(k, q)).collect::<Vec<_>>())
            .collect();
        self.push(name, NodeKind::Select { keys, queries, table }, Vec::new())
    }

    pub fn count(&mut self, name: &str, selector: NodeId) -> Result<NodeId, RaspError> {
        match self.nodes.get(selector) {
            Some(n) if n.is_selector() => {}
            Some(n) => return Err(RaspError::NotASelector(n.name.clone())),
            None => return Err(RaspError::UnknownNode(format!("#{selector}"))),
        }
        let domain = (0..=self.max_seq_len).map(Value::from).collect();
        self.push(name, NodeKind::Count { selector }, domain)
    }

    pub fn build(self, output: NodeId) -> Result<Program, RaspError> {
        let program = Program {
            name: self.name,
            vocabulary: self.vocabulary,
            bos: self.bos,
            max_seq_len: self.max_seq_len,
            causal: self.causal,
            nodes: self.nodes,
            output,
        };
        program.validate()?;
        Ok(program)
    }
}

fn sorted_image(outs: &[Value]) -> Vec<Value> {
    outs.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

fn index_into(name: &str, outs: &[Value], domain: &[Value]) -> Result<Vec<usize>, RaspError> {
    let lookup: HashMap<&Value, usize> = domain.iter().enumerate().map(|(i, v)| (v, i)).collect();
    outs.iter()
        .map(|v| {
            lookup
                .get(v)
                .copied()
                .ok_or_else(|| RaspError::Domain(format!("{name}: output {v} outside declared domain")))
        })
        .collect()
}
