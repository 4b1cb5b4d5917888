//! Scripted mock backend for deterministic runs.
//!
//! A script is a list of rules, one JSON object per line:
//!
//! ```text
//! {"match":{"prompt_substring":"Q: Why?"},"reply":{"text":"because","logprobs":[-0.1]}}
//! {"match":{"prompt_substring":"Describe","image_ref":"img/1.jpg"},"reply":{"text":"a park"}}
//! {"match":{"prompt_substring":"autumn"},"reply":{"vector":[1,0,0,0]}}
//! ```
//!
//! The first rule whose substring occurs in the prompt (and whose image, if
//! given, equals the request image) wins. Text rules answer completion
//! requests, vector rules answer embedding requests.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::{BackendReply, ChatRequest, CompletionBackend, EmbeddingBackend};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub prompt_substring: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tokens: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        logprobs: Option<Vec<f64>>,
    },
    Vector {
        vector: Vec<f32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub matcher: RuleMatch,
    pub reply: MockReply,
}

impl MockRule {
    pub fn text(prompt_substring: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            matcher: RuleMatch {
                prompt_substring: prompt_substring.into(),
                image_ref: None,
            },
            reply: MockReply::Text {
                text: text.into(),
                tokens: None,
                logprobs: None,
            },
        }
    }

    /// A reply carrying token log-probabilities; tokens default to whitespace
    /// splitting of `text` (or the whole text for a single log-probability).
    pub fn scored(prompt_substring: impl Into<String>, text: impl Into<String>, logprobs: Vec<f64>) -> Self {
        let mut rule = Self::text(prompt_substring, text);
        if let MockReply::Text { logprobs: lp, .. } = &mut rule.reply {
            *lp = Some(logprobs);
        }
        rule
    }

    pub fn vector(prompt_substring: impl Into<String>, vector: Vec<f32>) -> Self {
        Self {
            matcher: RuleMatch {
                prompt_substring: prompt_substring.into(),
                image_ref: None,
            },
            reply: MockReply::Vector { vector },
        }
    }

    pub fn with_image(mut self, image: impl Into<String>) -> Self {
        self.matcher.image_ref = Some(image.into());
        self
    }

    fn matches(&self, prompt: &str, image: Option<&str>) -> bool {
        let image_ok = match (&self.matcher.image_ref, image) {
            (None, _) => true,
            (Some(want), Some(got)) => want == got,
            (Some(_), None) => false,
        };
        image_ok && prompt.contains(&self.matcher.prompt_substring)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match &self.reply {
            MockReply::Text { text, tokens, logprobs } => {
                if let Some(lp) = logprobs {
                    if lp.iter().any(|x| !x.is_finite() || *x > 0.0) {
                        return Err("logprobs must be finite and <= 0".into());
                    }
                    let n = tokens
                        .as_ref()
                        .map(Vec::len)
                        .unwrap_or_else(|| default_tokens(text, lp.len()).len());
                    if n != lp.len() {
                        return Err(format!("{n} tokens but {} logprobs", lp.len()));
                    }
                }
                Ok(())
            }
            MockReply::Vector { vector } => {
                if vector.is_empty() || vector.iter().any(|x| !x.is_finite()) {
                    return Err("vector must be non-empty and finite".into());
                }
                Ok(())
            }
        }
    }
}

fn default_tokens(text: &str, n_logprobs: usize) -> Vec<String> {
    if n_logprobs == 1 {
        vec![text.to_string()]
    } else {
        text.split_whitespace().map(str::to_string).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>) -> Result<Self> {
        for (i, rule) in rules.iter().enumerate() {
            rule.validate().map_err(|message| Error::Parse {
                path: "<mock script>".into(),
                line: i + 1,
                message,
            })?;
        }
        Ok(Self { rules })
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_string(),
                line: idx + 1,
                message,
            };
            let rule: MockRule = serde_json::from_str(trimmed).map_err(|e| err(e.to_string()))?;
            rule.validate().map_err(err)?;
            rules.push(rule);
        }
        Ok(Self { rules })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        for rule in &self.rules {
            serde_json::to_writer(&mut out, rule)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Stable identity of the script contents.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for rule in &self.rules {
            h.update(serde_json::to_vec(rule).expect("rule serializes"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    fn dim(&self) -> Option<usize> {
        self.rules.iter().find_map(|r| match &r.reply {
            MockReply::Vector { vector } => Some(vector.len()),
            MockReply::Text { .. } => None,
        })
    }
}

/// Serves both completions and embeddings from a [`MockScript`]. Performs no I/O.
#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    model: String,
    strict: bool,
    calls: AtomicU64,
}

impl MockBackend {
    /// Strict: unmatched requests fail with [`Error::MockUnmatched`].
    pub fn new(script: MockScript) -> Self {
        let model = format!("script-{}", &script.digest()[..16]);
        Self {
            script,
            model,
            strict: true,
            calls: AtomicU64::new(0),
        }
    }

    /// Unmatched completions return empty text; unmatched embeddings return a
    /// zero vector of the script's dimension.
    pub fn lenient(script: MockScript) -> Self {
        Self {
            strict: false,
            ..Self::new(script)
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn unmatched(prompt: &str, image: Option<&str>) -> Error {
        Error::MockUnmatched {
            prompt_head: prompt.chars().take(80).collect(),
            image: image.map(str::to_string),
        }
    }
}

impl CompletionBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn supports_logprobs(&self) -> bool {
        true
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<BackendReply> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let image = request.image.map(|i| i.reference.as_str());
        let hit = self.script.rules.iter().find_map(|rule| match &rule.reply {
            MockReply::Text { text, tokens, logprobs } if rule.matches(request.prompt, image) => {
                Some((text, tokens, logprobs))
            }
            _ => None,
        });
        match hit {
            Some((text, tokens, logprobs)) => {
                let tokens = match (tokens, logprobs) {
                    (Some(t), _) => t.clone(),
                    (None, Some(lp)) => default_tokens(text, lp.len()),
                    (None, None) => text.split_whitespace().map(str::to_string).collect(),
                };
                Ok(BackendReply {
                    text: text.clone(),
                    tokens,
                    logprobs: logprobs.clone(),
                })
            }
            None if self.strict => Err(Self::unmatched(request.prompt, image)),
            None => Ok(BackendReply {
                text: String::new(),
                tokens: Vec::new(),
                logprobs: None,
            }),
        }
    }
}

impl EmbeddingBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> Option<usize> {
        self.script.dim()
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let hit = self.script.rules.iter().find_map(|rule| match &rule.reply {
            MockReply::Vector { vector } if rule.matches(text, None) => Some(vector.clone()),
            _ => None,
        });
        match (hit, self.strict, self.script.dim()) {
            (Some(v), _, _) => Ok(v),
            (None, false, Some(dim)) => Ok(vec![0.0; dim]),
            _ => Err(Self::unmatched(text, None)),
        }
    }
}
