//! HTTP JSON backends for OpenAI-compatible chat-completion and embedding endpoints.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::types::{BackendReply, ChatRequest, CompletionBackend, EmbeddingBackend, ImagePayload};
use crate::error::{Error, Result};

static REQUESTS_SENT: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of HTTP requests attempted by any backend in this module.
pub fn requests_sent() -> u64 {
    REQUESTS_SENT.load(Ordering::SeqCst)
}

#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after a transport failure or 5xx/429 response.
    pub retries: u32,
}

impl HttpSettings {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            retries: 2,
        }
    }
}

struct Transport {
    settings: HttpSettings,
    agent: ureq::Agent,
    id: String,
}

impl Transport {
    fn new(settings: HttpSettings) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(settings.timeout).build();
        let id = format!("http:{}", settings.url);
        Self { settings, agent, id }
    }

    fn post(&self, body: &Value) -> Result<Value> {
        let mut last = String::new();
        for attempt in 0..=self.settings.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 * u64::from(attempt)));
            }
            REQUESTS_SENT.fetch_add(1, Ordering::SeqCst);
            let mut req = self.agent.post(&self.settings.url);
            if let Some(key) = &self.settings.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body.clone()) {
                Ok(resp) => {
                    return resp
                        .into_json::<Value>()
                        .map_err(|e| Error::InvalidResponse(format!("{}: {e}", self.id)))
                }
                Err(ureq::Error::Status(code, resp)) if code == 429 || code >= 500 => {
                    last = format!("HTTP {code}: {}", resp.into_string().unwrap_or_default());
                }
                Err(ureq::Error::Status(code, resp)) => {
                    return Err(Error::InvalidResponse(format!(
                        "{}: HTTP {code}: {}",
                        self.id,
                        resp.into_string().unwrap_or_default()
                    )))
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::BackendUnreachable {
            backend: self.id.clone(),
            message: last,
        })
    }
}

fn image_url(image: &ImagePayload) -> Result<String> {
    if image.is_uri() {
        return Ok(image.reference.clone());
    }
    let bytes = image.bytes.as_ref().ok_or_else(|| {
        Error::io(
            &image.reference,
            std::io::Error::new(std::io::ErrorKind::NotFound, "image not readable"),
        )
    })?;
    let ext = image
        .reference
        .rsplit('.')
        .next()
        .unwrap_or_default()
        .to_ascii_lowercase();
    let mime = match ext.as_str() {
        "png" => "image/png",
        "gif" => "image/gif",
        "webp" => "image/webp",
        _ => "image/jpeg",
    };
    let data = base64::engine::general_purpose::STANDARD.encode(bytes.as_slice());
    Ok(format!("data:{mime};base64,{data}"))
}

/// Builds the chat-completion request body.
pub fn chat_request_body(model: &str, request: &ChatRequest<'_>) -> Result<Value> {
    let content = match request.image {
        None => Value::String(request.prompt.to_string()),
        Some(image) => json!([
            {"type": "text", "text": request.prompt},
            {"type": "image_url", "image_url": {"url": image_url(image)?}},
        ]),
    };
    let mut body = json!({
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "temperature": request.params.temperature,
        "max_tokens": request.params.max_tokens,
        "n": 1,
        "logprobs": request.want_logprobs,
    });
    if !request.params.stop.is_empty() {
        body["stop"] = json!(request.params.stop);
    }
    Ok(body)
}

/// Extracts text, tokens and log-probabilities from a chat-completion response.
///
/// Accepts the `choices[0].logprobs.content[{token, logprob}]` layout as well as
/// the flat `choices[0].logprobs.{tokens, token_logprobs}` layout.
pub fn parse_chat_response(v: &Value) -> Result<BackendReply> {
    let bad = |m: &str| Error::InvalidResponse(m.to_string());
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| bad("response has no choices"))?;
    let text = choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .ok_or_else(|| bad("response has no message content"))?
        .to_string();

    let mut tokens = Vec::new();
    let mut logprobs = None;
    if let Some(content) = choice.pointer("/logprobs/content").and_then(Value::as_array) {
        let mut lps = Vec::with_capacity(content.len());
        for entry in content {
            let token = entry.get("token").and_then(Value::as_str).ok_or_else(|| bad("logprob entry without token"))?;
            let lp = entry.get("logprob").and_then(Value::as_f64).ok_or_else(|| bad("logprob entry without logprob"))?;
            tokens.push(token.to_string());
            lps.push(lp);
        }
        logprobs = Some(lps);
    } else if let (Some(toks), Some(lps)) = (
        choice.pointer("/logprobs/tokens").and_then(Value::as_array),
        choice.pointer("/logprobs/token_logprobs").and_then(Value::as_array),
    ) {
        if toks.len() != lps.len() {
            return Err(bad("token and logprob lists differ in length"));
        }
        tokens = toks.iter().map(|t| t.as_str().unwrap_or_default().to_string()).collect();
        logprobs = Some(
            lps.iter()
                .map(|x| x.as_f64().ok_or_else(|| bad("non-numeric logprob")))
                .collect::<Result<_>>()?,
        );
    } else {
        tokens = text.split_whitespace().map(str::to_string).collect();
    }
    if let Some(lps) = &mut logprobs {
        for lp in lps.iter_mut() {
            if lp.is_nan() {
                return Err(bad("NaN logprob"));
            }
            // servers occasionally report tiny positive values from rounding
            *lp = lp.min(0.0);
        }
    }
    Ok(BackendReply { text, tokens, logprobs })
}

pub fn parse_embedding_response(v: &Value) -> Result<Vec<f32>> {
    let arr = v
        .get("vector")
        .or_else(|| v.pointer("/data/0/embedding"))
        .or_else(|| v.get("embedding"))
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidResponse("response has no vector".into()))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .map(|f| f as f32)
                .filter(|f| f.is_finite())
                .ok_or_else(|| Error::InvalidResponse("non-finite vector component".into()))
        })
        .collect()
}

pub struct HttpChatBackend {
    transport: Transport,
    logprobs: bool,
}

impl HttpChatBackend {
    pub fn new(settings: HttpSettings) -> Self {
        Self {
            transport: Transport::new(settings),
            logprobs: true,
        }
    }

    /// Marks the endpoint as unable to return log-probabilities.
    pub fn without_logprobs(mut self) -> Self {
        self.logprobs = false;
        self
    }
}

impl CompletionBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.transport.id
    }

    fn model(&self) -> &str {
        &self.transport.settings.model
    }

    fn supports_logprobs(&self) -> bool {
        self.logprobs
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<BackendReply> {
        let body = chat_request_body(self.model(), request)?;
        parse_chat_response(&self.transport.post(&body)?)
    }
}

pub struct HttpEmbedBackend {
    transport: Transport,
    dim: Option<usize>,
}

impl HttpEmbedBackend {
    pub fn new(settings: HttpSettings, dim: Option<usize>) -> Self {
        Self {
            transport: Transport::new(settings),
            dim,
        }
    }
}

impl EmbeddingBackend for HttpEmbedBackend {
    fn id(&self) -> &str {
        &self.transport.id
    }

    fn model(&self) -> &str {
        &self.transport.settings.model
    }

    fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let body = json!({"model": self.model(), "input": text});
        parse_embedding_response(&self.transport.post(&body)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::types::DecodingParams;
    use std::sync::Arc;

    #[test]
    fn text_request_shape() {
        let params = DecodingParams::answer();
        let req = ChatRequest {
            prompt: "Q: Why?",
            image: None,
            want_logprobs: true,
            params: &params,
        };
        let body = chat_request_body("llama", &req).unwrap();
        assert_eq!(body["model"], "llama");
        assert_eq!(body["messages"][0]["content"], "Q: Why?");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["logprobs"], true);
        assert_eq!(body["stop"][0], "\n");
    }

    #[test]
    fn vision_request_inlines_bytes() {
        let params = DecodingParams::default();
        let img = ImagePayload {
            reference: "x.png".into(),
            digest: "d".into(),
            bytes: Some(Arc::new(vec![1, 2, 3])),
        };
        let req = ChatRequest {
            prompt: "Describe",
            image: Some(&img),
            want_logprobs: false,
            params: &params,
        };
        let body = chat_request_body("vlm", &req).unwrap();
        assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
        assert!(body.get("stop").is_none());

        let uri = ImagePayload {
            reference: "https://example.org/a.jpg".into(),
            digest: "d".into(),
            bytes: None,
        };
        let req = ChatRequest { image: Some(&uri), ..req };
        let body = chat_request_body("vlm", &req).unwrap();
        assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "https://example.org/a.jpg");

        let missing = ImagePayload {
            reference: "nope.jpg".into(),
            digest: "d".into(),
            bytes: None,
        };
        let req = ChatRequest { image: Some(&missing), ..req };
        assert!(chat_request_body("vlm", &req).is_err());
    }

    #[test]
    fn parses_logprob_layouts() {
        let v = json!({"choices":[{"message":{"content":"autumn"},
            "logprobs":{"content":[{"token":"aut","logprob":-0.25},{"token":"umn","logprob":1e-9}]}}]});
        let r = parse_chat_response(&v).unwrap();
        assert_eq!(r.text, "autumn");
        assert_eq!(r.tokens, ["aut", "umn"]);
        assert_eq!(r.logprobs, Some(vec![-0.25, 0.0]));

        let v = json!({"choices":[{"text":"red","logprobs":{"tokens":["red"],"token_logprobs":[-0.5]}}]});
        assert_eq!(parse_chat_response(&v).unwrap().logprobs, Some(vec![-0.5]));

        let v = json!({"choices":[{"message":{"content":"no probs here"}}]});
        let r = parse_chat_response(&v).unwrap();
        assert_eq!(r.logprobs, None);
        assert_eq!(r.tokens.len(), 3);

        assert!(parse_chat_response(&json!({"choices":[]})).is_err());
    }

    #[test]
    fn parses_embedding_layouts() {
        assert_eq!(parse_embedding_response(&json!({"vector":[1.0, 2.0]})).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            parse_embedding_response(&json!({"data":[{"embedding":[0.5]}]})).unwrap(),
            vec![0.5]
        );
        assert!(parse_embedding_response(&json!({"nothing":1})).is_err());
    }
}
