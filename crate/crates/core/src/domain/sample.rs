use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque image reference (file path or URI). Bytes are only read by the gateway.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ImageRef {
    fn from(s: &str) -> Self {
        ImageRef(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainPool,
    #[default]
    Eval,
}

/// One image-question pair with its gold annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(rename = "id")]
    pub sample_id: String,
    pub image: ImageRef,
    pub question: String,
    #[serde(rename = "answers")]
    pub annotations: Vec<String>,
    #[serde(default)]
    pub split: Split,
    /// Pre-rendered visual context, used when the sample serves as an in-context example.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

impl Sample {
    /// Most frequent annotation (by normalized form); ties go to the earliest.
    pub fn majority_answer(&self) -> Option<&str> {
        let normalized: Vec<String> = self
            .annotations
            .iter()
            .map(|a| super::normalize_answer(a))
            .collect();
        let mut best: Option<(usize, usize)> = None;
        for (i, n) in normalized.iter().enumerate() {
            if normalized[..i].contains(n) {
                continue;
            }
            let count = normalized.iter().filter(|m| *m == n).count();
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((i, count));
            }
        }
        best.map(|(i, _)| self.annotations[i].as_str())
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    image: Option<String>,
    question: Option<String>,
    answers: Option<Vec<String>>,
    split: Option<Split>,
    context: Option<String>,
}

/// Parses line-delimited sample records. Blank lines are skipped.
pub fn parse_dataset(reader: impl BufRead, source: &str) -> Result<Vec<Sample>> {
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        let missing = |field| Error::MissingField {
            path: source.to_string(),
            line: line_no,
            field,
        };
        let id = raw.id.filter(|s| !s.is_empty()).ok_or_else(|| missing("id"))?;
        let image = raw.image.filter(|s| !s.is_empty()).ok_or_else(|| missing("image"))?;
        let question = raw
            .question
            .filter(|q| !q.trim().is_empty())
            .ok_or_else(|| missing("question"))?;
        let split = raw.split.unwrap_or_default();
        let annotations = raw.answers.unwrap_or_default();
        if split == Split::Eval && annotations.is_empty() {
            return Err(missing("answers"));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId {
                path: source.to_string(),
                line: line_no,
                id,
            });
        }
        samples.push(Sample {
            sample_id: id,
            image: ImageRef(image),
            question,
            annotations,
            split,
            context: raw.context,
        });
    }
    Ok(samples)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file), &path.display().to_string())
}

pub fn write_dataset(samples: &[Sample], mut out: impl Write) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
