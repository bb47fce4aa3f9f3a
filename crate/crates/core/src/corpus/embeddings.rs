//! Precomputed token vectors, stored in a little-endian binary file.
//!
//! Layout:
//!
//! ```text
//! "FEMB" | d: u32 | vector count: u64 | example count: u32
//! index table, one entry per example:  id_len: u32 | id bytes | offset: u64
//! records, grouped by example:        sent_id: u32 | token: u32 | d x f32
//! ```
//!
//! `offset` is the absolute byte position of the example's first record; an
//! example's records run up to the next example's offset (or end of file).

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use super::Example;
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"FEMB";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenAddr {
    pub sent_id: u32,
    pub token: u32,
}

impl TokenAddr {
    pub fn new(sent_id: u32, token: u32) -> Self {
        TokenAddr { sent_id, token }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    d: usize,
    examples: Vec<(String, BTreeMap<TokenAddr, Vec<f32>>)>,
}

impl EmbeddingFile {
    pub fn new(d: usize) -> Self {
        EmbeddingFile {
            d,
            examples: Vec::new(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Total number of stored vectors.
    pub fn count(&self) -> usize {
        self.examples.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn example_ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|(id, _)| id.as_str())
    }

    pub fn insert(&mut self, example_id: &str, addr: TokenAddr, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                found: vector.len(),
            });
        }
        let slot = match self.examples.iter().position(|(id, _)| id == example_id) {
            Some(i) => i,
            None => {
                self.examples
                    .push((example_id.to_string(), BTreeMap::new()));
                self.examples.len() - 1
            }
        };
        if self.examples[slot].1.insert(addr, vector).is_some() {
            return Err(Error::validation(
                example_id,
                format!(
                    "token (sentence {}, index {}) addressed more than once",
                    addr.sent_id, addr.token
                ),
            ));
        }
        Ok(())
    }

    pub fn get(&self, example_id: &str, addr: TokenAddr) -> Option<&[f32]> {
        self.examples
            .iter()
            .find(|(id, _)| id == example_id)
            .and_then(|(_, m)| m.get(&addr))
            .map(Vec::as_slice)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&(self.count() as u64).to_le_bytes());
        out.extend_from_slice(&(self.examples.len() as u32).to_le_bytes());

        let table_len: usize = self.examples.iter().map(|(id, _)| 4 + id.len() + 8).sum();
        let record_len = 8 + 4 * self.d;
        let mut offset = out.len() + table_len;
        for (id, vectors) in &self.examples {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&(offset as u64).to_le_bytes());
            offset += vectors.len() * record_len;
        }
        for (_, vectors) in &self.examples {
            for (addr, v) in vectors {
                out.extend_from_slice(&addr.sent_id.to_le_bytes());
                out.extend_from_slice(&addr.token.to_le_bytes());
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != EMBEDDING_MAGIC {
            return Err(format_error("bad magic, expected \"FEMB\""));
        }
        let d = r.u32()? as usize;
        let count = r.u64()? as usize;
        let n_examples = r.u32()? as usize;
        let mut index = Vec::with_capacity(n_examples);
        for _ in 0..n_examples {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| format_error("example id is not UTF-8"))?
                .to_string();
            let offset = r.u64()? as usize;
            index.push((id, offset));
        }
        let record_len = 8 + 4 * d;
        let mut file = EmbeddingFile::new(d);
        for (k, (id, offset)) in index.iter().enumerate() {
            let end = index.get(k + 1).map_or(bytes.len(), |(_, o)| *o);
            if end < *offset || (end - offset) % record_len != 0 {
                return Err(format_error(&format!(
                    "record block for example '{id}' is not a whole number of records"
                )));
            }
            r.pos = *offset;
            file.examples.push((id.clone(), BTreeMap::new()));
            while r.pos < end {
                let addr = TokenAddr::new(r.u32()?, r.u32()?);
                let mut v = Vec::with_capacity(d);
                for _ in 0..d {
                    let x = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
                    if !x.is_finite() {
                        return Err(Error::validation(
                            id.clone(),
                            format!(
                                "non-finite value in vector for sentence {} token {}",
                                addr.sent_id, addr.token
                            ),
                        ));
                    }
                    v.push(x);
                }
                file.insert(id, addr, v)?;
            }
        }
        if file.count() != count {
            return Err(format_error(&format!(
                "header declares {count} vectors, file holds {}",
                file.count()
            )));
        }
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Verifies that every token of every example has a vector.
    pub fn check_coverage(&self, examples: &[Example]) -> Result<()> {
        for ex in examples {
            let vectors = self
                .examples
                .iter()
                .find(|(id, _)| *id == ex.example_id)
                .map(|(_, m)| m);
            for (_, sentence) in ex.sentences() {
                for tok in &sentence.tokens {
                    let addr = TokenAddr::new(sentence.sent_id, tok.index as u32);
                    if !vectors.is_some_and(|m| m.contains_key(&addr)) {
                        return Err(Error::Coverage {
                            example_id: ex.example_id.clone(),
                            sent_id: addr.sent_id,
                            token: addr.token,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Builds a file with one vector per token, produced by `vector_for`.
    pub fn from_fn(
        d: usize,
        examples: &[Example],
        mut vector_for: impl FnMut(&str, TokenAddr) -> Vec<f32>,
    ) -> Result<Self> {
        let mut file = EmbeddingFile::new(d);
        let mut seen = HashSet::new();
        for ex in examples {
            for (_, sentence) in ex.sentences() {
                for tok in &sentence.tokens {
                    let addr = TokenAddr::new(sentence.sent_id, tok.index as u32);
                    if seen.insert((ex.example_id.as_str(), addr)) {
                        file.insert(&ex.example_id, addr, vector_for(&ex.example_id, addr))?;
                    }
                }
            }
        }
        Ok(file)
    }
}

/// Reads an embedding file and checks it against the dataset and the configured width.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    examples: &[Example],
    expected_d: usize,
) -> Result<EmbeddingFile> {
    let file = EmbeddingFile::read(path)?;
    if file.d() != expected_d {
        return Err(Error::Dimension {
            expected: expected_d,
            found: file.d(),
        });
    }
    file.check_coverage(examples)?;
    Ok(file)
}

fn format_error(msg: &str) -> Error {
    Error::validation("", format!("embedding file: {msg}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(format_error("truncated file"));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
