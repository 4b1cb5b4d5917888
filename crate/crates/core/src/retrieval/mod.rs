//! Corpus ingestion, the persistent embedding index and exact top-r search.

mod corpus;
mod index;
mod keywords;
mod query;
mod search;

pub use corpus::{corpus_digest, load_corpus, parse_corpus, Document};
pub use index::{KnowledgeIndex, MAGIC};
pub use keywords::{extract_keywords, parse_keywords, KeywordSet};
pub use query::{build_low_noise_query, build_verbose_query, LowNoiseQuery};
pub use search::{dot, rank_order, scan_parallel, scan_sequential, RetrievalResult, ScoredDoc};

use crate::error::Result;
use crate::gateway::Gateway;

/// Embeds the query text and returns the exact top-`r` documents.
pub fn search_top_r(index: &KnowledgeIndex, gateway: &Gateway, query: &str, r: usize) -> Result<RetrievalResult> {
    let embedding = gateway.embed_text(query)?;
    index.search(&embedding.vector, r)
}
