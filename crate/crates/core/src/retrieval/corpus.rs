use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A knowledge-base entry. Documents are the retrieval unit; no chunking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub text: String,
}

#[derive(Deserialize)]
struct RawDoc {
    id: Option<String>,
    text: Option<String>,
}

pub fn parse_corpus(reader: impl BufRead, source: &str) -> Result<Vec<Document>> {
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDoc = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        let missing = |field| Error::MissingField {
            path: source.to_string(),
            line: line_no,
            field,
        };
        let doc_id = raw.id.filter(|s| !s.is_empty()).ok_or_else(|| missing("id"))?;
        let text = raw.text.filter(|t| !t.trim().is_empty()).ok_or_else(|| missing("text"))?;
        if !seen.insert(doc_id.clone()) {
            return Err(Error::DuplicateId {
                path: source.to_string(),
                line: line_no,
                id: doc_id,
            });
        }
        docs.push(Document { doc_id, text });
    }
    Ok(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), &path.display().to_string())
}

/// SHA-256 over the ordered `(id, text)` sequence; independent of file formatting.
pub fn corpus_digest(docs: &[Document]) -> String {
    let mut h = Sha256::new();
    for d in docs {
        h.update(d.doc_id.as_bytes());
        h.update([0u8]);
        h.update(d.text.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_digests() {
        let text = "{\"id\":\"d1\",\"text\":\"Leaves fall in autumn.\"}\n\n{\"id\":\"d2\",\"text\":\"Snow falls in winter.\"}\n";
        let docs = parse_corpus(text.as_bytes(), "c").unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].doc_id, "d2");
        let reformatted = "{ \"text\": \"Leaves fall in autumn.\", \"id\": \"d1\" }\n{\"id\":\"d2\",\"text\":\"Snow falls in winter.\"}";
        assert_eq!(
            corpus_digest(&docs),
            corpus_digest(&parse_corpus(reformatted.as_bytes(), "c").unwrap())
        );
    }

    #[test]
    fn rejects_bad_records() {
        let dup = "{\"id\":\"d1\",\"text\":\"a\"}\n{\"id\":\"d1\",\"text\":\"b\"}";
        assert!(matches!(parse_corpus(dup.as_bytes(), "c"), Err(Error::DuplicateId { line: 2, .. })));
        let empty = "{\"id\":\"d1\",\"text\":\"  \"}";
        assert!(matches!(parse_corpus(empty.as_bytes(), "c"), Err(Error::MissingField { field: "text", .. })));
        assert!(matches!(parse_corpus("nope".as_bytes(), "c"), Err(Error::Parse { line: 1, .. })));
    }
}
