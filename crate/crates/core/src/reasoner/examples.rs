//! In-context example selection from the training pool.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Sample, SelectorKind, Split};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::par;
use crate::retrieval::dot;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub sample_id: String,
    pub question: String,
    pub context: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub examples: Vec<Example>,
    pub selector: SelectorKind,
    pub j_index: usize,
    /// Fewer candidates than `n` were available.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub id: String,
    pub neighbors: Vec<String>,
}

pub type Neighbors = HashMap<String, Vec<String>>;

pub fn parse_neighbors(reader: impl BufRead, source: &str) -> Result<Neighbors> {
    let mut out = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NeighborRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if out.contains_key(&rec.id) {
            return Err(Error::DuplicateId {
                path: source.to_string(),
                line: idx + 1,
                id: rec.id,
            });
        }
        out.insert(rec.id, rec.neighbors);
    }
    Ok(out)
}

pub fn load_neighbors(path: impl AsRef<Path>) -> Result<Neighbors> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_neighbors(BufReader::new(file), &path.display().to_string())
}

/// Writes records sorted by sample id.
pub fn write_neighbors(neighbors: &Neighbors, mut out: impl Write) -> std::io::Result<()> {
    let mut ids: Vec<&String> = neighbors.keys().collect();
    ids.sort();
    for id in ids {
        let rec = NeighborRecord {
            id: id.clone(),
            neighbors: neighbors[id].clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

enum Source {
    Precomputed(Neighbors),
    Embedding { vectors: Vec<f32>, dim: usize },
}

/// Picks example sets for the ensemble. The pool holds annotated `train_pool` samples only.
pub struct ExampleSelector {
    pool: Vec<Sample>,
    by_id: HashMap<String, usize>,
    source: Source,
}

fn pool_of(samples: &[Sample]) -> Vec<Sample> {
    samples
        .iter()
        .filter(|s| s.split == Split::TrainPool && !s.annotations.is_empty())
        .cloned()
        .collect()
}

impl ExampleSelector {
    pub fn precomputed(samples: &[Sample], neighbors: Neighbors) -> Self {
        let pool = pool_of(samples);
        Self {
            by_id: pool.iter().enumerate().map(|(i, s)| (s.sample_id.clone(), i)).collect(),
            pool,
            source: Source::Precomputed(neighbors),
        }
    }

    /// Embeds every pool question up front.
    pub fn embedding(samples: &[Sample], gateway: &Gateway) -> Result<Self> {
        let pool = pool_of(samples);
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        let embeddings = par::try_map(&pool, |s| gateway.embed_text(&s.question))?;
        let dim = embeddings[0].dim;
        let mut vectors = Vec::with_capacity(dim * pool.len());
        for e in embeddings {
            if e.dim != dim {
                return Err(Error::DimMismatch { expected: dim, found: e.dim });
            }
            vectors.extend(e.vector);
        }
        Ok(Self {
            by_id: pool.iter().enumerate().map(|(i, s)| (s.sample_id.clone(), i)).collect(),
            pool,
            source: Source::Embedding { vectors, dim },
        })
    }

    pub fn kind(&self) -> SelectorKind {
        match self.source {
            Source::Precomputed(_) => SelectorKind::PrecomputedNeighbors,
            Source::Embedding { .. } => SelectorKind::EmbeddingSimilarity,
        }
    }

    pub fn pool(&self) -> &[Sample] {
        &self.pool
    }

    /// Up to `limit` pool positions, most similar first.
    fn candidates(&self, sample: &Sample, gateway: &Gateway, limit: usize) -> Result<Vec<usize>> {
        match &self.source {
            Source::Precomputed(neighbors) => {
                let listed = neighbors
                    .get(&sample.sample_id)
                    .ok_or_else(|| Error::NeighborsMissing(sample.sample_id.clone()))?;
                let mut seen = HashSet::new();
                let mut out = Vec::new();
                for id in listed {
                    let &pos = self.by_id.get(id).ok_or_else(|| Error::UnknownNeighbor {
                        sample_id: sample.sample_id.clone(),
                        example_id: id.clone(),
                    })?;
                    if id != &sample.sample_id && seen.insert(pos) {
                        out.push(pos);
                    }
                    if out.len() == limit {
                        break;
                    }
                }
                Ok(out)
            }
            Source::Embedding { vectors, dim } => {
                let q = gateway.embed_text(&sample.question)?;
                if q.dim != *dim {
                    return Err(Error::DimMismatch {
                        expected: *dim,
                        found: q.dim,
                    });
                }
                let mut scored: Vec<(f32, usize)> = (0..self.pool.len())
                    .filter(|&i| self.pool[i].sample_id != sample.sample_id)
                    .map(|i| (dot(&vectors[i * dim..(i + 1) * dim], &q.vector), i))
                    .collect();
                scored.sort_by(|a, b| {
                    crate::retrieval::rank_order(a.0, &self.pool[a.1].sample_id, b.0, &self.pool[b.1].sample_id)
                });
                Ok(scored.into_iter().take(limit).map(|(_, i)| i).collect())
            }
        }
    }

    /// The `m` example sets. The top `m*n` candidates are dealt out by rotation:
    /// set `j` takes `min(n, len)` consecutive items starting at `(j-1)*n mod len`, wrapping.
    pub fn select_all(&self, sample: &Sample, gateway: &Gateway, n: usize, m: usize) -> Result<Vec<ExampleSet>> {
        let kind = self.kind();
        if n == 0 {
            return Ok((1..=m)
                .map(|j| ExampleSet {
                    examples: Vec::new(),
                    selector: kind,
                    j_index: j,
                    clamped: false,
                })
                .collect());
        }
        if self.pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        let list = self.candidates(sample, gateway, n.saturating_mul(m))?;
        let len = list.len();
        let take = n.min(len);
        if take < n {
            tracing::warn!(sample = %sample.sample_id, n, available = len, "fewer examples than requested");
        }
        Ok((1..=m)
            .map(|j| {
                let start = if len == 0 { 0 } else { ((j - 1) * n) % len };
                ExampleSet {
                    examples: (0..take).map(|k| self.example(list[(start + k) % len])).collect(),
                    selector: kind,
                    j_index: j,
                    clamped: take < n,
                }
            })
            .collect())
    }

    pub fn select(&self, sample: &Sample, gateway: &Gateway, n: usize, m: usize, j: usize) -> Result<ExampleSet> {
        let mut all = self.select_all(sample, gateway, n, m.max(j))?;
        Ok(all.swap_remove(j - 1))
    }

    fn example(&self, pos: usize) -> Example {
        let s = &self.pool[pos];
        Example {
            sample_id: s.sample_id.clone(),
            question: s.question.clone(),
            context: s.context.clone().unwrap_or_default(),
            answer: s.majority_answer().unwrap_or_default().to_string(),
        }
    }
}
