//! Visual-question rewriting, visual detail extraction and segment filtering.

use std::collections::HashSet;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{normalize_answer, ImageRef, SampleMode};
use crate::error::Result;
use crate::gateway::{Gateway, TemplateId, TemplateSet};
use crate::retrieval::Document;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualQuestion {
    pub text: String,
    pub origin_question: String,
    /// Set when the reply was blank and the original question was reused.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VisualDetails {
    pub text: String,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    pub source_doc_id: Option<String>,
    pub verbatim: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SegmentSet {
    pub segments: Vec<Segment>,
    /// No parseable line in the reply.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSample {
    pub segments: Vec<String>,
    pub h_requested: usize,
    pub mode: SampleMode,
    pub seed: u64,
}

pub fn to_visual_question(gateway: &Gateway, templates: &TemplateSet, question: &str) -> Result<VisualQuestion> {
    let prompt = templates.render(TemplateId::VisualQuestion, &[("question", question)])?;
    let reply = gateway.complete_chat(&prompt, None, false)?;
    let first = reply.text.lines().map(str::trim).find(|l| !l.is_empty());
    Ok(match first {
        Some(line) => VisualQuestion {
            text: line.to_string(),
            origin_question: question.to_string(),
            fallback: false,
        },
        None => {
            tracing::warn!(question, "blank visual-question reply; reusing the question");
            VisualQuestion {
                text: question.to_string(),
                origin_question: question.to_string(),
                fallback: true,
            }
        }
    })
}

pub fn extract_visual_details(gateway: &Gateway, image: &ImageRef, q_v: &VisualQuestion) -> Result<VisualDetails> {
    let reply = gateway.complete_chat(&q_v.text, Some(image), false)?;
    let text = reply.text.trim().to_string();
    Ok(VisualDetails {
        empty: text.is_empty(),
        text,
    })
}

/// Renders the retrieved documents as `[id]` headed blocks for the filter prompt.
pub fn render_documents(docs: &[&Document]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push('[');
        out.push_str(&d.doc_id);
        out.push_str("]\n");
        out.push_str(d.text.trim());
        out.push_str("\n\n");
    }
    out
}

fn strip_list_marker(line: &str) -> &str {
    let s = line.trim();
    if let Some(rest) = s.strip_prefix(['-', '*', '\u{2022}']) {
        return rest.trim_start();
    }
    let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        if let Some(rest) = s[digits..].strip_prefix(['.', ')']) {
            if rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    s
}

/// One segment per reply line; markers stripped, duplicates (after answer normalization) removed,
/// provenance set when the segment occurs verbatim (case-insensitively) in a document.
pub fn parse_segments(reply: &str, docs: &[&Document]) -> SegmentSet {
    let lowered: Vec<String> = docs.iter().map(|d| d.text.to_lowercase()).collect();
    let mut seen = HashSet::new();
    let mut segments = Vec::new();
    for line in reply.lines() {
        let text = strip_list_marker(line).trim();
        if text.is_empty() || !seen.insert(normalize_answer(text)) {
            continue;
        }
        let needle = text.to_lowercase();
        let source = lowered.iter().position(|t| t.contains(&needle));
        segments.push(Segment {
            text: text.to_string(),
            source_doc_id: source.map(|i| docs[i].doc_id.clone()),
            verbatim: source.is_some(),
        });
    }
    SegmentSet {
        empty: segments.is_empty(),
        segments,
    }
}

pub fn filter_segments(
    gateway: &Gateway,
    templates: &TemplateSet,
    docs: &[&Document],
    question: &str,
    details: &VisualDetails,
) -> Result<SegmentSet> {
    let documents = render_documents(docs);
    let prompt = templates.render(
        TemplateId::SegmentFilter,
        &[("documents", &documents), ("question", question), ("details", &details.text)],
    )?;
    let reply = gateway.complete_chat(&prompt, None, false)?;
    let set = parse_segments(&reply.text, docs);
    if set.empty {
        tracing::warn!(question, "segment filter produced no segments");
    }
    Ok(set)
}

fn sample_rng(seed: u64, sample_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(sample_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Chooses `min(h, |K_s|)` segments. Head mode keeps the reply order; seeded mode draws
/// without replacement from a generator keyed on `(seed, sample_id)` and keeps reply order.
pub fn select_h(set: &SegmentSet, h: usize, mode: SampleMode, seed: u64, sample_id: &str) -> SegmentSample {
    let take = h.min(set.segments.len());
    let chosen: Vec<usize> = match mode {
        SampleMode::Head => (0..take).collect(),
        SampleMode::SeededUniform => {
            let mut idx = sample_indices(&mut sample_rng(seed, sample_id), set.segments.len(), take).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    SegmentSample {
        segments: chosen.into_iter().map(|i| set.segments[i].text.clone()).collect(),
        h_requested: h,
        mode,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockRule, MockScript};
    use proptest::prelude::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            doc_id: id.into(),
            text: text.into(),
        }
    }

    fn set_of(texts: &[&str]) -> SegmentSet {
        parse_segments(&texts.join("\n"), &[])
    }

    #[test]
    fn visual_question_first_line_or_fallback() {
        let script = MockScript::new(vec![
            MockRule::text("Original question: What season is it?", "\n  What foliage or weather is visible?\nextra"),
            MockRule::text("Original question: Blank?", "  \n"),
        ])
        .unwrap();
        let gw = Gateway::mock(script).build();
        let t = TemplateSet::default();
        let qv = to_visual_question(&gw, &t, "What season is it?").unwrap();
        assert_eq!(qv.text, "What foliage or weather is visible?");
        assert!(!qv.fallback);
        let qv = to_visual_question(&gw, &t, "Blank?").unwrap();
        assert_eq!(qv.text, "Blank?");
        assert!(qv.fallback);
    }

    #[test]
    fn details_trimmed_and_flagged() {
        let script = MockScript::new(vec![
            MockRule::text("foliage", "  falling leaves on the ground \n").with_image("park.jpg"),
            MockRule::text("nothing", "").with_image("park.jpg"),
        ])
        .unwrap();
        let gw = Gateway::mock(script).build();
        let qv = |t: &str| VisualQuestion {
            text: t.into(),
            origin_question: "q".into(),
            fallback: false,
        };
        let img = ImageRef::from("park.jpg");
        let d = extract_visual_details(&gw, &img, &qv("What foliage is visible?")).unwrap();
        assert_eq!(d.text, "falling leaves on the ground");
        assert!(!d.empty);
        assert!(extract_visual_details(&gw, &img, &qv("nothing here")).unwrap().empty);
    }

    #[test]
    fn segments_markers_dedup_and_provenance() {
        let s = set_of(&["- A", "- A", "- B"]);
        let texts: Vec<_> = s.segments.iter().map(|x| x.text.as_str()).collect();
        assert_eq!(texts, ["A", "B"]);

        let docs = [doc("d1", "Snow in winter."), doc("d2", "In temperate zones, leaves fall from trees in autumn.")];
        let refs: Vec<&Document> = docs.iter().collect();
        let s = parse_segments("1. Leaves fall from trees in autumn.\nThe moon is cheese.\n\n", &refs);
        assert_eq!(s.segments.len(), 2);
        assert!(s.segments[0].verbatim);
        assert_eq!(s.segments[0].source_doc_id.as_deref(), Some("d2"));
        assert!(!s.segments[1].verbatim);
        assert_eq!(s.segments[1].source_doc_id, None);
        assert!(parse_segments(" \n", &refs).empty);
    }

    #[test]
    fn filter_prompt_carries_documents() {
        let docs = [doc("d1", "Leaves fall from trees in autumn.")];
        let refs: Vec<&Document> = docs.iter().collect();
        let script = MockScript::new(vec![MockRule::text(
            "[d1]\nLeaves fall from trees in autumn.\n\n\nQuestion: What season is it?\nVisual details: falling leaves\n",
            "Leaves fall from trees in autumn.",
        )])
        .unwrap();
        let gw = Gateway::mock(script).build();
        let details = VisualDetails {
            text: "falling leaves".into(),
            empty: false,
        };
        let s = filter_segments(&gw, &TemplateSet::default(), &refs, "What season is it?", &details).unwrap();
        assert_eq!(s.segments.len(), 1);
        assert!(s.segments[0].verbatim);
    }

    #[test]
    fn select_h_modes() {
        let ten: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let refs: Vec<&str> = ten.iter().map(String::as_str).collect();
        let s = set_of(&refs);
        assert_eq!(select_h(&s, 7, SampleMode::Head, 0, "q").segments, &ten[..7]);
        assert_eq!(select_h(&set_of(&["a", "b", "c"]), 7, SampleMode::Head, 0, "q").segments.len(), 3);
        let a = select_h(&s, 4, SampleMode::SeededUniform, 42, "q1");
        let b = select_h(&s, 4, SampleMode::SeededUniform, 42, "q1");
        assert_eq!(a, b);
        // independent re-run of the same keyed generator
        let mut expect = sample_indices(&mut sample_rng(42, "q1"), 10, 4).into_vec();
        expect.sort_unstable();
        let expect: Vec<String> = expect.into_iter().map(|i| format!("s{i}")).collect();
        assert_eq!(a.segments, expect);
    }

    proptest! {
        #[test]
        fn select_h_is_sized_subset(n in 0usize..15, h in 1usize..20, seed in any::<u64>(), uniform in any::<bool>()) {
            let texts: Vec<String> = (0..n).map(|i| format!("seg {i}")).collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let set = set_of(&refs);
            let mode = if uniform { SampleMode::SeededUniform } else { SampleMode::Head };
            let out = select_h(&set, h, mode, seed, "s");
            prop_assert_eq!(out.segments.len(), h.min(n));
            let mut seen = HashSet::new();
            for s in &out.segments {
                prop_assert!(texts.contains(s));
                prop_assert!(seen.insert(s.clone()));
            }
        }

        #[test]
        fn segments_unique_and_verbatim_sound(
            lines in proptest::collection::vec("[a-cA-C .,-]{0,8}", 0..12),
            doc_text in "[a-cA-C .,]{0,40}",
        ) {
            let docs = [doc("d", &doc_text)];
            let refs: Vec<&Document> = docs.iter().collect();
            let set = parse_segments(&lines.join("\n"), &refs);
            let mut norms = HashSet::new();
            for s in &set.segments {
                prop_assert!(norms.insert(normalize_answer(&s.text)));
                if s.verbatim {
                    prop_assert!(doc_text.to_lowercase().contains(&s.text.to_lowercase()));
                }
            }
        }
    }
}
