//! Uniform access to the three model capabilities: text completion with
//! token log-probabilities, vision-conditioned completion, and text embedding.
//!
//! Every request is content-addressed: the digest covers backend id, model,
//! prompt, image digest and decoding parameters. With a cache attached,
//! identical requests are served from disk and never reach the backend.

mod cache;
pub mod http;
mod mock;
mod prompt;
mod types;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::ResponseCache;
pub use mock::{MockBackend, MockReply, MockRule, MockScript, RuleMatch};
pub use prompt::{render_prompt, PromptTemplate, TemplateId, TemplateSet};
pub use types::{
    BackendReply, ChatRequest, Completion, CompletionBackend, DecodingParams, Embedding, EmbeddingBackend,
    ImagePayload,
};

use crate::domain::ImageRef;
use crate::error::{Error, Result};

/// Counting semaphore bounding in-flight backend calls.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut free = self.free.lock().expect("limiter lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter lock");
        }
        *free -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("limiter lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
}

#[derive(Serialize)]
struct ChatKey<'a> {
    kind: &'static str,
    backend: &'a str,
    model: &'a str,
    prompt: &'a str,
    image: Option<&'a str>,
    logprobs: bool,
    params: &'a DecodingParams,
}

#[derive(Serialize)]
struct EmbedKey<'a> {
    kind: &'static str,
    backend: &'a str,
    model: &'a str,
    text: &'a str,
}

#[derive(Serialize, Deserialize)]
struct CachedEmbedding {
    dim: usize,
    /// little-endian f32, base64
    vector: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Gateway {
    chat: Arc<dyn CompletionBackend>,
    vision: Arc<dyn CompletionBackend>,
    embed: Arc<dyn EmbeddingBackend>,
    cache: Option<ResponseCache>,
    limiter: Limiter,
    params: DecodingParams,
    image_root: Option<PathBuf>,
    embed_dim: OnceLock<usize>,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

pub struct GatewayBuilder {
    chat: Arc<dyn CompletionBackend>,
    vision: Option<Arc<dyn CompletionBackend>>,
    embed: Arc<dyn EmbeddingBackend>,
    cache: Option<ResponseCache>,
    parallelism: usize,
    params: DecodingParams,
    image_root: Option<PathBuf>,
}

impl GatewayBuilder {
    /// Backend for image-conditioned calls; defaults to the chat backend.
    pub fn vision(mut self, backend: Arc<dyn CompletionBackend>) -> Self {
        self.vision = Some(backend);
        self
    }

    pub fn cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn parallelism(mut self, n: usize) -> Self {
        self.parallelism = n;
        self
    }

    pub fn params(mut self, params: DecodingParams) -> Self {
        self.params = params;
        self
    }

    /// Directory that relative image references are resolved against.
    pub fn image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            vision: self.vision.unwrap_or_else(|| self.chat.clone()),
            chat: self.chat,
            embed: self.embed,
            cache: self.cache,
            limiter: Limiter::new(self.parallelism),
            params: self.params,
            image_root: self.image_root,
            embed_dim: OnceLock::new(),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }
}

impl Gateway {
    pub fn builder(chat: Arc<dyn CompletionBackend>, embed: Arc<dyn EmbeddingBackend>) -> GatewayBuilder {
        GatewayBuilder {
            chat,
            vision: None,
            embed,
            cache: None,
            parallelism: 8,
            params: DecodingParams::default(),
            image_root: None,
        }
    }

    /// All three capabilities served by one scripted mock.
    pub fn mock(script: MockScript) -> GatewayBuilder {
        let mock = Arc::new(MockBackend::new(script));
        Self::builder(mock.clone(), mock)
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }

    /// `capability=backend/model` identity strings.
    pub fn identities(&self) -> Vec<String> {
        vec![
            format!("chat={}/{}", self.chat.id(), self.chat.model()),
            format!("vision={}/{}", self.vision.id(), self.vision.model()),
            format!("embed={}/{}", self.embed.id(), self.embed.model()),
        ]
    }

    pub fn resolve_image(&self, image: &ImageRef) -> Result<ImagePayload> {
        let reference = image.as_str().to_string();
        let probe = ImagePayload {
            reference: reference.clone(),
            digest: String::new(),
            bytes: None,
        };
        if probe.is_uri() {
            return Ok(ImagePayload {
                digest: sha256_hex(format!("uri:{reference}").as_bytes()),
                ..probe
            });
        }
        let path = match &self.image_root {
            Some(root) if Path::new(&reference).is_relative() => root.join(&reference),
            _ => PathBuf::from(&reference),
        };
        match std::fs::read(&path) {
            Ok(bytes) => Ok(ImagePayload {
                digest: sha256_hex(&bytes),
                bytes: Some(Arc::new(bytes)),
                ..probe
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ImagePayload {
                digest: sha256_hex(format!("ref:{reference}").as_bytes()),
                ..probe
            }),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn complete_chat(&self, prompt: &str, image: Option<&ImageRef>, want_logprobs: bool) -> Result<Completion> {
        let params = self.params.clone();
        self.complete_chat_with(prompt, image, want_logprobs, &params)
    }

    /// Image-bearing requests go to the vision backend, the rest to chat.
    pub fn complete_chat_with(
        &self,
        prompt: &str,
        image: Option<&ImageRef>,
        want_logprobs: bool,
        params: &DecodingParams,
    ) -> Result<Completion> {
        let payload = image.map(|i| self.resolve_image(i)).transpose()?;
        let backend = if payload.is_some() { &self.vision } else { &self.chat };
        if want_logprobs && !backend.supports_logprobs() {
            return Err(Error::LogprobsMissing {
                backend: backend.id().to_string(),
            });
        }
        let key = ChatKey {
            kind: "chat",
            backend: backend.id(),
            model: backend.model(),
            prompt,
            image: payload.as_ref().map(|p| p.digest.as_str()),
            logprobs: want_logprobs,
            params,
        };
        let digest = sha256_hex(&serde_json::to_vec(&key).expect("key serializes"));

        if let Some(bytes) = self.cache_get(&digest)? {
            let completion: Completion = serde_json::from_slice(&bytes).map_err(|_| Error::CacheCorrupt {
                digest: digest.clone(),
            })?;
            return Ok(completion);
        }

        let request = ChatRequest {
            prompt,
            image: payload.as_ref(),
            want_logprobs,
            params,
        };
        let reply = {
            let _slot = self.limiter.acquire();
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            backend.complete(&request)?
        };
        let token_logprobs = match (want_logprobs, reply.logprobs) {
            (true, None) => {
                return Err(Error::LogprobsMissing {
                    backend: backend.id().to_string(),
                })
            }
            (true, Some(lp)) => {
                if lp.len() != reply.tokens.len() || lp.iter().any(|x| !x.is_finite() || *x > 0.0) {
                    return Err(Error::InvalidResponse(format!(
                        "{}: {} tokens with {} logprobs",
                        backend.id(),
                        reply.tokens.len(),
                        lp.len()
                    )));
                }
                lp
            }
            (false, _) => Vec::new(),
        };
        let completion = Completion {
            text: reply.text,
            tokens: reply.tokens,
            token_logprobs,
            backend_id: backend.id().to_string(),
            request_digest: digest.clone(),
        };
        if let Some(cache) = &self.cache {
            cache.put(&digest, &serde_json::to_vec(&completion).expect("completion serializes"))?;
        }
        Ok(completion)
    }

    pub fn embed_text(&self, text: &str) -> Result<Embedding> {
        let key = EmbedKey {
            kind: "embed",
            backend: self.embed.id(),
            model: self.embed.model(),
            text,
        };
        let digest = sha256_hex(&serde_json::to_vec(&key).expect("key serializes"));
        let source_text_digest = sha256_hex(text.as_bytes());

        let vector = match self.cache_get(&digest)? {
            Some(bytes) => decode_embedding(&bytes).ok_or_else(|| Error::CacheCorrupt {
                digest: digest.clone(),
            })?,
            None => {
                let vector = {
                    let _slot = self.limiter.acquire();
                    self.backend_calls.fetch_add(1, Ordering::Relaxed);
                    self.embed.embed(text)?
                };
                if vector.is_empty() || vector.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidResponse(format!(
                        "{}: empty or non-finite embedding",
                        self.embed.id()
                    )));
                }
                if let Some(cache) = &self.cache {
                    cache.put(&digest, &encode_embedding(&vector))?;
                }
                vector
            }
        };

        let expected = self.embed.dim().unwrap_or_else(|| *self.embed_dim.get_or_init(|| vector.len()));
        if vector.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                found: vector.len(),
            });
        }
        Ok(Embedding {
            dim: vector.len(),
            vector,
            source_text_digest,
        })
    }

    fn cache_get(&self, digest: &str) -> Result<Option<Vec<u8>>> {
        let Some(cache) = &self.cache else {
            return Ok(None);
        };
        let hit = cache.get(digest)?;
        if hit.is_some() {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
        }
        Ok(hit)
    }
}

fn encode_embedding(v: &[f32]) -> Vec<u8> {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    let entry = CachedEmbedding {
        dim: v.len(),
        vector: base64::engine::general_purpose::STANDARD.encode(bytes),
    };
    serde_json::to_vec(&entry).expect("embedding serializes")
}

fn decode_embedding(bytes: &[u8]) -> Option<Vec<f32>> {
    let entry: CachedEmbedding = serde_json::from_slice(bytes).ok()?;
    let raw = base64::engine::general_purpose::STANDARD.decode(entry.vector).ok()?;
    if raw.len() != entry.dim * 4 {
        return None;
    }
    Some(
        raw.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script() -> MockScript {
        MockScript::new(vec![
            MockRule::scored("Q: Why?", "because", vec![-0.1]),
            MockRule::text("no probs", "plain"),
            MockRule::vector("autumn", vec![1.0, 0.0, 0.0, 0.0]),
            MockRule::vector("wide", vec![1.0; 8]),
        ])
        .unwrap()
    }

    #[test]
    fn scripted_completion() {
        let gw = Gateway::mock(script()).build();
        let c = gw.complete_chat("Q: Why?", None, true).unwrap();
        assert_eq!(c.text, "because");
        assert_eq!(c.token_logprobs, vec![-0.1]);
        assert_eq!(c.backend_id, "mock");
        assert_eq!(c.request_digest.len(), 64);
    }

    #[test]
    fn second_request_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::mock(script())
            .cache(ResponseCache::open(dir.path()).unwrap())
            .build();
        let a = gw.complete_chat("Q: Why?", None, true).unwrap();
        let b = gw.complete_chat("Q: Why?", None, true).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert_eq!(gw.stats(), GatewayStats { backend_calls: 1, cache_hits: 1 });

        // a fresh gateway over the same cache never calls the backend
        let gw2 = Gateway::mock(script())
            .cache(ResponseCache::open(dir.path()).unwrap())
            .build();
        assert_eq!(gw2.complete_chat("Q: Why?", None, true).unwrap(), a);
        assert_eq!(gw2.stats().backend_calls, 0);
    }

    #[test]
    fn logprobs_missing_is_an_error() {
        let gw = Gateway::mock(script()).build();
        assert!(matches!(
            gw.complete_chat("no probs", None, true),
            Err(Error::LogprobsMissing { .. })
        ));
        assert!(gw.complete_chat("no probs", None, false).unwrap().token_logprobs.is_empty());
    }

    #[test]
    fn backend_without_logprob_support_rejected_up_front() {
        let chat = Arc::new(http::HttpChatBackend::new(http::HttpSettings::new("http://127.0.0.1:9", "m")).without_logprobs());
        let embed = Arc::new(MockBackend::new(script()));
        let gw = Gateway::builder(chat, embed).build();
        let before = http::requests_sent();
        assert!(matches!(gw.complete_chat("x", None, true), Err(Error::LogprobsMissing { .. })));
        assert_eq!(http::requests_sent(), before);
    }

    #[test]
    fn embedding_determinism_and_dims() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::mock(script())
            .cache(ResponseCache::open(dir.path()).unwrap())
            .build();
        let a = gw.embed_text("autumn").unwrap();
        let b = gw.embed_text("autumn").unwrap();
        assert_eq!(a.vector, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(a.dim, 4);
        let bits = |e: &Embedding| e.vector.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert!(matches!(gw.embed_text("wide"), Err(Error::DimMismatch { expected: 4, found: 8 })));
    }

    #[test]
    fn embedding_cache_is_bit_exact() {
        let v = vec![0.1f32, -3.4028235e38, 1e-45, 0.33333334];
        assert_eq!(decode_embedding(&encode_embedding(&v)).unwrap(), v);
        assert!(decode_embedding(b"{\"dim\":3,\"vector\":\"AAAA\"}").is_none());
    }

    #[test]
    fn image_digests() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.jpg"), b"jpegbytes").unwrap();
        let gw = Gateway::mock(script()).image_root(dir.path()).build();
        let real = gw.resolve_image(&"a.jpg".into()).unwrap();
        assert_eq!(real.bytes.as_deref().map(Vec::as_slice), Some(&b"jpegbytes"[..]));
        let missing = gw.resolve_image(&"b.jpg".into()).unwrap();
        assert!(missing.bytes.is_none());
        assert_ne!(real.digest, missing.digest);
        let uri = gw.resolve_image(&"https://x/y.png".into()).unwrap();
        assert!(uri.is_uri() && uri.bytes.is_none());
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Arc::new(Limiter::new(2));
        let active = Arc::new(AtomicU64::new(0));
        let peak = Arc::new(AtomicU64::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (l, a, p) = (limiter.clone(), active.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _g = l.acquire();
                    let now = a.fetch_add(1, Ordering::SeqCst) + 1;
                    p.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(5));
                    a.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
