//! Answer normalization for the VQA accuracy metric.
//!
//! Rules live in a versioned, line-oriented table (`data/vqa_normalization.tsv`)
//! so that behaviour is pinned by data rather than code. A table consists of
//! `@flag<TAB>value` header lines followed by `from<TAB>to` word pairs.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../../data/vqa_normalization.tsv");

#[derive(Debug, Clone)]
pub struct NormalizationTable {
    version: String,
    articles: HashSet<String>,
    punct: Vec<char>,
    words: HashMap<String, String>,
}

impl NormalizationTable {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut version = None;
        let mut articles = HashSet::new();
        let mut punct = Vec::new();
        let mut words = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: source.to_string(),
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `from<TAB>to`".into()))?;
            if let Some(flag) = key.strip_prefix('@') {
                match flag {
                    "version" => version = Some(value.to_string()),
                    "articles" => articles = value.split_whitespace().map(str::to_string).collect(),
                    "punct" => {
                        punct = value
                            .split_whitespace()
                            .map(|tok| {
                                let mut chars = tok.chars();
                                match (chars.next(), chars.next()) {
                                    (Some(c), None) => Ok(c),
                                    _ => Err(parse_err(format!("punct entry {tok:?} is not one character"))),
                                }
                            })
                            .collect::<Result<_>>()?;
                    }
                    other => return Err(parse_err(format!("unknown flag @{other}"))),
                }
            } else {
                if key.is_empty() || key.contains(' ') {
                    return Err(parse_err(format!("bad key {key:?}")));
                }
                if words.insert(key.to_string(), value.to_string()).is_some() {
                    return Err(parse_err(format!("duplicate key {key:?}")));
                }
            }
        }
        let version = version.ok_or_else(|| Error::Parse {
            path: source.to_string(),
            line: 0,
            message: "missing @version header".into(),
        })?;
        Ok(Self {
            version,
            articles,
            punct,
            words,
        })
    }

    /// The table shipped with the crate.
    pub fn standard() -> &'static NormalizationTable {
        static TABLE: OnceLock<NormalizationTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            NormalizationTable::parse(DEFAULT_TABLE, "vqa_normalization.tsv")
                .expect("bundled normalization table is valid")
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn normalize(&self, raw: &str) -> String {
        let input = raw.replace(['\n', '\t'], " ");
        let input = input.trim();

        let digit_comma_digit = has_digit_comma_digit(input);
        let mut text = input.to_string();
        for &p in &self.punct {
            let touches_space = input.contains(&format!("{p} ")) || input.contains(&format!(" {p}"));
            if touches_space || digit_comma_digit {
                text = text.replace(p, "");
            } else {
                text = text.replace(p, " ");
            }
        }
        let text = strip_periods(&text).to_lowercase();

        let mut out = String::with_capacity(text.len());
        for word in text.split_whitespace() {
            let word = self.words.get(word).map(String::as_str).unwrap_or(word);
            if self.articles.contains(word) {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(word);
        }
        out
    }
}

fn has_digit_comma_digit(s: &str) -> bool {
    let chars: Vec<char> = s.chars().collect();
    chars
        .windows(3)
        .any(|w| w[0].is_ascii_digit() && w[1] == ',' && w[2].is_ascii_digit())
}

/// Deletes every `.` not immediately followed by a digit.
fn strip_periods(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '.' && !chars.peek().is_some_and(|n| n.is_ascii_digit()) {
            continue;
        }
        out.push(c);
    }
    out
}

/// Normalizes with the bundled table.
pub fn normalize_answer(raw: &str) -> String {
    NormalizationTable::standard().normalize(raw)
}

/// An answer string together with its normalized form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerText {
    pub raw: String,
    pub normalized: String,
}

impl AnswerText {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let normalized = normalize_answer(&raw);
        Self { raw, normalized }
    }
}
