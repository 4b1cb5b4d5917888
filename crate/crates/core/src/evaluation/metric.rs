//! Standard VQA accuracy.

use serde::{Deserialize, Serialize};

use crate::domain::{normalize_answer, AnswerText};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub predicted: AnswerText,
    pub match_count: usize,
    pub accuracy: f64,
    pub knowledge_used: bool,
}

/// Annotations whose normalized form equals the normalized prediction.
pub fn match_count(predicted: &str, annotations: &[String]) -> usize {
    let p = normalize_answer(predicted);
    annotations.iter().filter(|a| normalize_answer(a) == p).count()
}

/// Leave-one-out accuracy from `k` matches among `total` annotations.
///
/// With ten or more annotations, each annotation is held out in turn and the
/// remaining ones score `min(1, matches/3)`; the result is the average. Shorter
/// lists score `min(1, k/3)` directly.
pub fn accuracy_from_counts(k: usize, total: usize) -> f64 {
    debug_assert!(k <= total && total > 0);
    if total < 10 {
        return k.min(3) as f64 / 3.0;
    }
    // held-out matching annotation leaves k-1 matches; a non-matching one leaves k
    let numerator = k * k.saturating_sub(1).min(3) + (total - k) * k.min(3);
    numerator as f64 / (3 * total) as f64
}

pub fn vqa_accuracy(predicted: &str, annotations: &[String]) -> Result<f64> {
    if annotations.is_empty() {
        return Err(Error::NoAnnotations);
    }
    Ok(accuracy_from_counts(match_count(predicted, annotations), annotations.len()))
}
