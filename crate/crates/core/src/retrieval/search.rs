//! Exact top-r dot-product scan.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::index::KnowledgeIndex;

/// Rows scored per parallel task.
const BLOCK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub ranked: Vec<ScoredDoc>,
}

impl RetrievalResult {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|d| d.doc_id.as_str())
    }
}

/// Left-to-right f32 accumulation. Every code path uses this so scores are bit-identical.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Ranking order: higher score first, then ascending doc id. `-0.0` and `0.0` tie.
pub fn rank_order(a_score: f32, a_id: &str, b_score: f32, b_id: &str) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_id.cmp(b_id))
}

fn cmp_rows(index: &KnowledgeIndex, a: &(usize, f32), b: &(usize, f32)) -> Ordering {
    let docs = index.documents();
    rank_order(a.1, &docs[a.0].doc_id, b.1, &docs[b.0].doc_id)
}

fn select(index: &KnowledgeIndex, mut rows: Vec<(usize, f32)>, r: usize) -> Vec<(usize, f32)> {
    if r == 0 {
        return Vec::new();
    }
    if rows.len() > r {
        rows.select_nth_unstable_by(r - 1, |a, b| cmp_rows(index, a, b));
        rows.truncate(r);
    }
    rows.sort_unstable_by(|a, b| cmp_rows(index, a, b));
    rows
}

fn finish(index: &KnowledgeIndex, rows: Vec<(usize, f32)>) -> RetrievalResult {
    let docs = index.documents();
    RetrievalResult {
        ranked: rows
            .into_iter()
            .map(|(i, score)| ScoredDoc {
                doc_id: docs[i].doc_id.clone(),
                score,
            })
            .collect(),
    }
}

/// Single-threaded full scan.
pub fn scan_sequential(index: &KnowledgeIndex, query: &[f32], r: usize) -> RetrievalResult {
    let rows = (0..index.len()).map(|i| (i, dot(index.vector(i), query))).collect();
    finish(index, select(index, rows, r))
}

/// Blocked scan: each block keeps its local top-r, then the candidates are merged.
/// Identical output to [`scan_sequential`] because the order is total.
pub fn scan_parallel(index: &KnowledgeIndex, query: &[f32], r: usize) -> RetrievalResult {
    let locals = crate::par::map_chunks(index.len(), BLOCK, |range| {
        let rows = range.map(|i| (i, dot(index.vector(i), query))).collect();
        select(index, rows, r)
    });
    finish(index, select(index, locals.into_iter().flatten().collect(), r))
}

pub(crate) fn top_r(index: &KnowledgeIndex, query: &[f32], r: usize) -> RetrievalResult {
    if index.len() <= BLOCK {
        scan_sequential(index, query, r)
    } else {
        scan_parallel(index, query, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::Document;
    use proptest::prelude::*;

    fn index(vectors: Vec<Vec<f32>>) -> KnowledgeIndex {
        let dim = vectors[0].len();
        let docs = (0..vectors.len())
            .map(|i| Document {
                doc_id: format!("doc{}", i + 1),
                text: format!("text {i}"),
            })
            .collect();
        KnowledgeIndex::from_parts(docs, vectors.concat(), dim, "x".into()).unwrap()
    }

    fn naive(index: &KnowledgeIndex, q: &[f32], r: usize) -> Vec<(String, f32)> {
        let mut all: Vec<(String, f32)> = index
            .documents()
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let s: f32 = index.vector(i).iter().zip(q).fold(0.0, |acc, (a, b)| acc + a * b);
                (d.doc_id.clone(), s)
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(r);
        all
    }

    #[test]
    fn basis_vectors() {
        let idx = index(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let res = idx.search(&[0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(res.ranked, vec![ScoredDoc { doc_id: "doc2".into(), score: 1.0 }]);
    }

    #[test]
    fn zero_query_ties_by_id() {
        let idx = index(vec![vec![3.0, -1.0]; 12]);
        let res = idx.search(&[0.0, 0.0], 4).unwrap();
        let ids: Vec<_> = res.doc_ids().collect();
        // lexicographic id order
        assert_eq!(ids, ["doc1", "doc10", "doc11", "doc12"]);
        assert!(res.ranked.iter().all(|d| d.score == 0.0));
    }

    #[test]
    fn r_larger_than_corpus() {
        let idx = index(vec![vec![1.0], vec![2.0]]);
        assert_eq!(idx.search(&[1.0], 20).unwrap().ranked.len(), 2);
        assert!(idx.search(&[1.0], 0).unwrap().ranked.is_empty());
    }

    #[test]
    fn five_docs_dim_eight() {
        let mut rng = 0x2545F4914F6CDD1Du64;
        let mut next = || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            ((rng >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
        };
        let vecs: Vec<Vec<f32>> = (0..5).map(|_| (0..8).map(|_| next()).collect()).collect();
        let q: Vec<f32> = (0..8).map(|_| next()).collect();
        let idx = index(vecs);
        let got: Vec<_> = idx.search(&q, 3).unwrap().ranked.into_iter().map(|d| (d.doc_id, d.score)).collect();
        assert_eq!(got, naive(&idx, &q, 3));
    }

    proptest! {
        #[test]
        fn parallel_matches_sequential_and_naive(
            n in 1usize..700,
            dim in 1usize..6,
            r in 0usize..30,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // coarse grid values produce plenty of exact ties
            let vecs: Vec<Vec<f32>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2i8..=2) as f32 * 0.5).collect()).collect();
            let q: Vec<f32> = (0..dim).map(|_| rng.gen_range(-2i8..=2) as f32).collect();
            let idx = index(vecs);
            let seq = scan_sequential(&idx, &q, r);
            let par = scan_parallel(&idx, &q, r);
            prop_assert_eq!(&seq, &par);
            let got: Vec<_> = seq.ranked.into_iter().map(|d| (d.doc_id, d.score)).collect();
            prop_assert_eq!(got, naive(&idx, &q, r));
        }
    }
}
