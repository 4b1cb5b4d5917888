use serde::{Deserialize, Serialize};

use super::keywords::KeywordSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LowNoiseQuery {
    pub text: String,
    pub question_part: String,
    pub keyword_part: String,
}

/// `q` followed by the keywords, single-space joined. Words already in `q` are not removed.
pub fn build_low_noise_query(question: &str, keywords: Option<&KeywordSet>) -> LowNoiseQuery {
    let keyword_part = keywords.map(|k| k.keywords.join(" ")).unwrap_or_default();
    let text = if keyword_part.is_empty() {
        question.to_string()
    } else {
        format!("{question} {keyword_part}")
    };
    LowNoiseQuery {
        text,
        question_part: question.to_string(),
        keyword_part,
    }
}

/// Lengthy query used without keyword distillation: question, captions, then visual details.
pub fn build_verbose_query(question: &str, captions: &[String], details: &str) -> String {
    std::iter::once(question)
        .chain(captions.iter().map(String::as_str))
        .chain(std::iter::once(details))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}
