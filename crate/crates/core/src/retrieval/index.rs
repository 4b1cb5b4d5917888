//! Immutable embedding index and its on-disk format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "KFVQIDX1"                      8-byte magic
//! dim: u32, count: u64
//! count x { id_len: u32, id: [u8; id_len], vector: [f32; dim] }
//! digest_len: u32, corpus_digest: [u8; digest_len]
//! checksum: [u8; 32]              SHA-256 of every preceding byte
//! ```
//!
//! Document texts are not stored; they are re-attached from the corpus file,
//! whose digest must match the one recorded in the footer.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::corpus::{corpus_digest, Document};
use super::search::{self, RetrievalResult};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::par;

pub const MAGIC: &[u8; 8] = b"KFVQIDX1";

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeIndex {
    docs: Vec<Document>,
    vectors: Vec<f32>,
    dim: usize,
    corpus_digest: String,
    by_id: HashMap<String, usize>,
}

impl KnowledgeIndex {
    /// Assembles an index from documents and a row-major embedding matrix.
    pub fn from_parts(docs: Vec<Document>, vectors: Vec<f32>, dim: usize, corpus_digest: String) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidValue {
                param: "dim".into(),
                message: "must be positive".into(),
            });
        }
        if vectors.len() != docs.len() * dim {
            return Err(Error::DimMismatch {
                expected: docs.len() * dim,
                found: vectors.len(),
            });
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidValue {
                param: "vectors".into(),
                message: "non-finite component".into(),
            });
        }
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::InvalidValue {
                    param: "doc_id".into(),
                    message: format!("duplicate id {:?}", d.doc_id),
                });
            }
        }
        Ok(Self {
            docs,
            vectors,
            dim,
            corpus_digest,
            by_id,
        })
    }

    /// Embeds every document through the gateway (bounded by its parallelism limit).
    pub fn build(docs: Vec<Document>, gateway: &Gateway) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let embeddings = par::try_map(&docs, |d| gateway.embed_text(&d.text))?;
        let dim = embeddings[0].dim;
        let mut vectors = Vec::with_capacity(dim * docs.len());
        for e in &embeddings {
            if e.dim != dim {
                return Err(Error::DimMismatch { expected: dim, found: e.dim });
            }
            vectors.extend_from_slice(&e.vector);
        }
        let digest = corpus_digest(&docs);
        Self::from_parts(docs, vectors, dim, digest)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn corpus_digest(&self) -> &str {
        &self.corpus_digest
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    /// Exact top-`r` by raw dot product; ties broken by ascending doc id.
    pub fn search(&self, query: &[f32], r: usize) -> Result<RetrievalResult> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        Ok(search::top_r(self, query, r))
    }

    /// Replaces document texts with the corpus the index was built from.
    pub fn attach_corpus(&mut self, docs: Vec<Document>) -> Result<()> {
        let digest = corpus_digest(&docs);
        if digest != self.corpus_digest {
            return Err(Error::IndexIntegrity(format!(
                "corpus digest {digest} does not match index ({})",
                self.corpus_digest
            )));
        }
        if docs.len() != self.docs.len() || docs.iter().zip(&self.docs).any(|(a, b)| a.doc_id != b.doc_id) {
            return Err(Error::IndexIntegrity("corpus ids differ from index ids".into()));
        }
        self.docs = docs;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + 12 + self.vectors.len() * 4 + self.docs.len() * 16 + 100);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.docs.len() as u64).to_le_bytes());
        for (i, d) in self.docs.iter().enumerate() {
            buf.extend_from_slice(&(d.doc_id.len() as u32).to_le_bytes());
            buf.extend_from_slice(d.doc_id.as_bytes());
            for x in self.vector(i) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf.extend_from_slice(&(self.corpus_digest.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.corpus_digest.as_bytes());
        let checksum = Sha256::digest(&buf);
        buf.extend_from_slice(&checksum);
        buf
    }

    /// Parses an index file. Document texts come back empty; see [`attach_corpus`](Self::attach_corpus).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(8, "magic")? != MAGIC {
            return Err(Error::IndexIntegrity("bad magic bytes".into()));
        }
        if bytes.len() < 32 + 8 {
            return Err(Error::IndexIntegrity("file truncated".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        let dim = rd.u32("dim")? as usize;
        let count = rd.u64("count")?;
        if dim == 0 {
            return Err(Error::IndexIntegrity("zero dimension".into()));
        }
        // every record needs at least 4 + 4*dim bytes
        if count > (bytes.len() / (4 + 4 * dim)) as u64 {
            return Err(Error::IndexIntegrity(format!("record count {count} exceeds file size")));
        }
        let count = count as usize;
        let mut docs = Vec::with_capacity(count);
        let mut vectors = Vec::with_capacity(count * dim);
        for i in 0..count {
            let id_len = rd.u32("id length")? as usize;
            let id = std::str::from_utf8(rd.take(id_len, "id")?)
                .map_err(|_| Error::IndexIntegrity(format!("record {i}: id is not UTF-8")))?
                .to_string();
            let raw = rd.take(dim * 4, "vector")?;
            vectors.extend(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
            );
            docs.push(Document {
                doc_id: id,
                text: String::new(),
            });
        }
        let digest_len = rd.u32("digest length")? as usize;
        let digest = std::str::from_utf8(rd.take(digest_len, "corpus digest")?)
            .map_err(|_| Error::IndexIntegrity("corpus digest is not UTF-8".into()))?
            .to_string();
        if rd.pos != body.len() {
            return Err(Error::IndexIntegrity("unexpected bytes before checksum".into()));
        }
        if Sha256::digest(body).as_slice() != checksum {
            return Err(Error::IndexIntegrity("checksum mismatch".into()));
        }
        Self::from_parts(docs, vectors, dim, digest).map_err(|e| Error::IndexIntegrity(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads an index and re-attaches the texts from its corpus file.
    pub fn open(index_path: impl AsRef<Path>, corpus_path: impl AsRef<Path>) -> Result<Self> {
        let mut index = Self::load(index_path)?;
        index.attach_corpus(super::load_corpus(corpus_path)?)?;
        Ok(index)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::IndexIntegrity(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
