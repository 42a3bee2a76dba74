use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::TaskError;

/// Piece-level tokenizer for the student model.
///
/// Text is scanned into pieces: an optional leading space plus a run of
/// ASCII letters, an optional leading space plus one other character, or a
/// lone whitespace character. Digits are always single pieces. Pieces
/// missing from the vocabulary fall back to single characters, so every
/// printable ASCII string round-trips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "TokenizerDoc", into = "TokenizerDoc")]
pub struct StudentTokenizer {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerDoc {
    pieces: Vec<String>,
}

impl From<TokenizerDoc> for StudentTokenizer {
    fn from(d: TokenizerDoc) -> Self {
        Self::from_pieces(d.pieces)
    }
}

impl From<StudentTokenizer> for TokenizerDoc {
    fn from(t: StudentTokenizer) -> Self {
        TokenizerDoc { pieces: t.pieces }
    }
}

/// One encoded piece with its byte span in the source text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: usize,
    pub start: usize,
    pub end: usize,
}

fn renderable(c: char) -> bool {
    c == '\n' || (' '..='~').contains(&c)
}

/// Byte spans of the scanner's pieces.
pub fn scan(text: &str) -> Result<Vec<(usize, usize)>, TaskError> {
    let bytes = text.as_bytes();
    if let Some((pos, ch)) = text.char_indices().find(|&(_, c)| !renderable(c)) {
        return Err(TaskError::Unrenderable { ch, position: pos });
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        let c = bytes[i];
        let next = bytes.get(i + 1).copied();
        let lead = c == b' ' && next.is_some_and(|n| n != b' ' && n != b'\n');
        let body = if lead { i + 1 } else { i };
        if bytes[body].is_ascii_alphabetic() {
            i = body;
            while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
                i += 1;
            }
        } else {
            i = body + 1;
        }
        out.push((start, i));
    }
    Ok(out)
}

impl StudentTokenizer {
    fn from_pieces(pieces: Vec<String>) -> Self {
        let index = pieces.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        Self { pieces, index }
    }

    /// Single characters and space-prefixed characters of printable ASCII,
    /// plus the newline.
    pub fn base_pieces() -> Vec<String> {
        let mut v: Vec<String> = (' '..='~').map(String::from).collect();
        v.push("\n".into());
        v.extend(('!'..='~').map(|c| format!(" {c}")));
        v
    }

    /// Builds a vocabulary of at most `size` pieces: the base pieces, then
    /// every multi-letter piece of `required`, then the most frequent
    /// multi-letter pieces of `corpus` (ties broken alphabetically).
    pub fn train(corpus: &str, required: &[&str], size: usize) -> Result<Self, TaskError> {
        let mut pieces = Self::base_pieces();
        let mut seen: std::collections::HashSet<String> = pieces.iter().cloned().collect();
        for text in required {
            for (a, b) in scan(text)? {
                let p = &text[a..b];
                if seen.insert(p.to_string()) {
                    pieces.push(p.to_string());
                }
            }
        }
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for (a, b) in scan(corpus)? {
            let p = &corpus[a..b];
            if p.trim_start().len() >= 2 && !seen.contains(p) {
                *freq.entry(p).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        for (p, _) in ranked {
            if pieces.len() >= size {
                break;
            }
            pieces.push(p.to_string());
        }
        Ok(Self::from_pieces(pieces))
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: usize) -> &str {
        &self.pieces[id]
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    pub fn encode_spans(&self, text: &str) -> Result<Vec<Token>, TaskError> {
        let mut out = Vec::new();
        for (a, b) in scan(text)? {
            if let Some(id) = self.id(&text[a..b]) {
                out.push(Token { id, start: a, end: b });
                continue;
            }
            // Unknown letter run: first character keeps the leading space.
            let first = if text.as_bytes()[a] == b' ' { a + 2 } else { a + 1 };
            let mut s = a;
            let mut e = first;
            while s < b {
                let id = self.id(&text[s..e]).ok_or_else(|| TaskError::Unrenderable {
                    ch: text[s..].chars().next().unwrap(),
                    position: s,
                })?;
                out.push(Token { id, start: s, end: e });
                s = e;
                e = s + 1;
            }
        }
        Ok(out)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>, TaskError> {
        Ok(self.encode_spans(text)?.into_iter().map(|t| t.id).collect())
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.pieces[i].as_str()).collect()
    }
}
