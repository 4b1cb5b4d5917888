//! Prompt templates with named `{placeholder}` slots.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    /// Keyword distillation from an image-question pair.
    Keywords,
    /// Question rewritten to target visible content.
    VisualQuestion,
    /// Segment extraction from retrieved documents.
    SegmentFilter,
    /// Final answering prompt.
    Answer,
    /// Generic image caption.
    Caption,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::Keywords,
        TemplateId::VisualQuestion,
        TemplateId::SegmentFilter,
        TemplateId::Answer,
        TemplateId::Caption,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Keywords => "keywords",
            TemplateId::VisualQuestion => "visual_question",
            TemplateId::SegmentFilter => "segment_filter",
            TemplateId::Answer => "answer",
            TemplateId::Caption => "caption",
        }
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateId::Keywords | TemplateId::VisualQuestion => &["question"],
            TemplateId::SegmentFilter => &["documents", "question", "details"],
            TemplateId::Answer => &["examples", "context", "knowledge", "question"],
            TemplateId::Caption => &[],
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
    pub version: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    /// Parses `body`, rejecting placeholders the template id does not allow.
    pub fn new(id: TemplateId, body: impl Into<String>, version: impl Into<String>) -> Result<Self> {
        let body = body.into();
        let pieces = parse_body(&body, id)?;
        for p in &pieces {
            if let Piece::Slot(name) = p {
                if !id.placeholders().contains(&name.as_str()) {
                    return Err(Error::UnknownPlaceholder {
                        template: id.to_string(),
                        name: name.clone(),
                    });
                }
            }
        }
        Ok(Self {
            id,
            body,
            version: version.into(),
            pieces,
        })
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(s.as_str()),
            Piece::Text(_) => None,
        })
    }
}

fn parse_body(body: &str, id: TemplateId) -> Result<Vec<Piece>> {
    let malformed = |msg: &str| Error::Config(format!("template {id}: {msg}"));
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut chars = body.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                text.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                text.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) if ch.is_ascii_alphanumeric() || ch == '_' => name.push(ch),
                        _ => return Err(malformed("unterminated or malformed placeholder")),
                    }
                }
                if name.is_empty() {
                    return Err(malformed("empty placeholder"));
                }
                if !text.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut text)));
                }
                pieces.push(Piece::Slot(name));
            }
            '}' => return Err(malformed("stray `}`")),
            other => text.push(other),
        }
    }
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    Ok(pieces)
}

/// Substitutes every placeholder literally; bound values are not re-expanded.
/// Bindings that the template does not use are ignored.
pub fn render_prompt(template: &PromptTemplate, bindings: &HashMap<&str, &str>) -> Result<String> {
    let mut out = String::with_capacity(template.body.len());
    for piece in &template.pieces {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => {
                let value = bindings.get(name.as_str()).ok_or_else(|| Error::MissingBinding {
                    template: template.id.to_string(),
                    name: name.clone(),
                })?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct RawTemplate {
    version: String,
    body: String,
}

/// One template per [`TemplateId`].
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: HashMap<TemplateId, PromptTemplate>,
}

impl TemplateSet {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: HashMap<String, RawTemplate> =
            toml::from_str(text).map_err(|e| Error::Config(format!("template file: {e}")))?;
        let mut templates = HashMap::new();
        for id in TemplateId::ALL {
            let t = raw
                .get(id.as_str())
                .ok_or_else(|| Error::Config(format!("template file lacks [{id}]")))?;
            templates.insert(id, PromptTemplate::new(id, t.body.clone(), t.version.clone())?);
        }
        if let Some(extra) = raw.keys().find(|k| TemplateId::ALL.iter().all(|id| id.as_str() != k.as_str())) {
            return Err(Error::Config(format!("template file has unknown section [{extra}]")));
        }
        Ok(Self { templates })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn render(&self, id: TemplateId, bindings: &[(&str, &str)]) -> Result<String> {
        render_prompt(self.get(id), &bindings.iter().copied().collect())
    }

    pub fn replace(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id, template);
    }

    /// `id=version` pairs in a fixed order.
    pub fn versions(&self) -> Vec<String> {
        TemplateId::ALL
            .iter()
            .map(|id| format!("{id}={}", self.get(*id).version))
            .collect()
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}
