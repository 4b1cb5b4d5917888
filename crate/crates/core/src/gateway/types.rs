use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Output of a chat or vision call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub tokens: Vec<String>,
    /// Per-token log-probabilities; empty when none were requested.
    pub token_logprobs: Vec<f64>,
    pub backend_id: String,
    pub request_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub dim: usize,
    pub source_text_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 256,
            stop: Vec::new(),
        }
    }
}

impl DecodingParams {
    /// Short single-line answers.
    pub fn answer() -> Self {
        Self {
            max_tokens: 16,
            stop: vec!["\n".into()],
            ..Self::default()
        }
    }
}

/// An image resolved for a request. `bytes` is `None` for URIs and for
/// references that do not exist on disk.
#[derive(Debug, Clone)]
pub struct ImagePayload {
    pub reference: String,
    pub digest: String,
    pub bytes: Option<Arc<Vec<u8>>>,
}

impl ImagePayload {
    pub fn is_uri(&self) -> bool {
        let r = self.reference.as_str();
        r.starts_with("http://") || r.starts_with("https://") || r.starts_with("data:")
    }
}

pub struct ChatRequest<'a> {
    pub prompt: &'a str,
    pub image: Option<&'a ImagePayload>,
    pub want_logprobs: bool,
    pub params: &'a DecodingParams,
}

/// What a backend hands back before validation and caching.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub tokens: Vec<String>,
    pub logprobs: Option<Vec<f64>>,
}

pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> &str;
    fn model(&self) -> &str;
    fn supports_logprobs(&self) -> bool;
    fn complete(&self, request: &ChatRequest<'_>) -> Result<BackendReply>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> &str;
    fn model(&self) -> &str;
    /// Declared output dimension, if known up front.
    fn dim(&self) -> Option<usize>;
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
}
