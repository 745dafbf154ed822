use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::EMBED_DIM;

/// Pretrained word vectors; unknown tokens map to the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    zero: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
            zero: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::dim("embedding", &[vector.len()], &[self.dim]));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    /// The token's vector and whether it was out of vocabulary.
    pub fn lookup(&self, token: &str) -> (&[f64], bool) {
        match self.vectors.get(token) {
            Some(v) => (v, false),
            None => (&self.zero, true),
        }
    }

    /// Tokens in sorted order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut t: Vec<&str> = self.vectors.keys().map(String::as_str).collect();
        t.sort_unstable();
        t
    }

    /// Parses `token v1 ... v_dim` lines; blank lines are skipped.
    pub fn parse(text: &str, dim: usize, path: &Path) -> Result<Self> {
        let mut table = EmbeddingTable::new(dim);
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else {
                continue;
            };
            let values = parts
                .map(|p| p.parse::<f64>().map_err(|e| err(format!("bad number {p:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != dim {
                return Err(err(format!(
                    "token {token:?} has {} values, expected {dim}",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(err(format!("token {token:?} has a non-finite value")));
            }
            if table.vectors.insert(token.to_string(), values).is_some() {
                return Err(err(format!("duplicate token {token:?}")));
            }
        }
        Ok(table)
    }
}

/// Loads a 300-dimensional embedding text file.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::parse(&text, EMBED_DIM, path)
}

/// Writes tokens in sorted order with six decimals per value.
pub fn write_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for tok in table.tokens() {
        out.push_str(tok);
        for v in table.lookup(tok).0 {
            out.push_str(&format!(" {v:.6}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
