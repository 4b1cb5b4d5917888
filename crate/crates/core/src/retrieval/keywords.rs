use serde::{Deserialize, Serialize};

use crate::domain::Sample;
use crate::error::{Error, Result};
use crate::gateway::{Gateway, TemplateId, TemplateSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub keywords: Vec<String>,
    pub source_sample: String,
}

fn strip_marker(item: &str) -> &str {
    let s = item.trim_start_matches(['-', '*', '\u{2022}']).trim_start();
    let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        match s[digits..].strip_prefix(['.', ')']) {
            Some(rest) if rest.is_empty() || rest.starts_with(char::is_whitespace) => return rest.trim_start(),
            _ => {}
        }
    }
    s
}

/// Splits a keyword reply on commas and newlines; lowercases, trims, dedups, truncates to `cap`.
pub fn parse_keywords(reply: &str, cap: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for item in reply.split([',', '\n']) {
        let kw = strip_marker(item.trim())
            .trim()
            .trim_end_matches(['.', ';'])
            .trim()
            .to_lowercase();
        if kw.is_empty() || out.contains(&kw) {
            continue;
        }
        out.push(kw);
        if out.len() == cap {
            break;
        }
    }
    out
}

/// Asks the vision model for concise keywords about the image-question pair.
pub fn extract_keywords(gateway: &Gateway, templates: &TemplateSet, sample: &Sample, cap: usize) -> Result<KeywordSet> {
    let prompt = templates.render(TemplateId::Keywords, &[("question", &sample.question)])?;
    let reply = gateway.complete_chat(&prompt, Some(&sample.image), false)?;
    let keywords = parse_keywords(&reply.text, cap);
    if keywords.is_empty() {
        return Err(Error::EmptyKeywords);
    }
    Ok(KeywordSet {
        keywords,
        source_sample: sample.sample_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockRule, MockScript};
    use proptest::prelude::*;

    #[test]
    fn parses_lists() {
        assert_eq!(
            parse_keywords("falling leaves, trees, season", 8),
            ["falling leaves", "trees", "season"]
        );
        assert_eq!(parse_keywords("Dog, dog , DOG", 8), ["dog"]);
        assert_eq!(parse_keywords("1. Oak\n2) maple.\n- birch\n\n", 8), ["oak", "maple", "birch"]);
        let ten = (0..10).map(|i| format!("k{i}")).collect::<Vec<_>>().join(", ");
        assert_eq!(parse_keywords(&ten, 8), (0..8).map(|i| format!("k{i}")).collect::<Vec<_>>());
        assert!(parse_keywords(" , \n ,", 8).is_empty());
    }

    #[test]
    fn extracts_via_vision_backend() {
        let script = MockScript::new(vec![
            MockRule::text("Keywords:", "falling leaves, trees, season").with_image("img/park.jpg"),
        ])
        .unwrap();
        let gw = Gateway::mock(script).build();
        let sample = Sample {
            sample_id: "q1".into(),
            image: "img/park.jpg".into(),
            question: "What season is it?".into(),
            annotations: vec!["autumn".into()],
            split: Default::default(),
            context: None,
        };
        let ks = extract_keywords(&gw, &TemplateSet::default(), &sample, 8).unwrap();
        assert_eq!(ks.keywords, ["falling leaves", "trees", "season"]);
        assert_eq!(ks.source_sample, "q1");
    }

    #[test]
    fn blank_reply_is_empty_keywords() {
        let script = MockScript::new(vec![MockRule::text("Keywords:", "  ")]).unwrap();
        let gw = Gateway::mock(script).build();
        let sample = Sample {
            sample_id: "q1".into(),
            image: "x.jpg".into(),
            question: "Why?".into(),
            annotations: vec!["a".into()],
            split: Default::default(),
            context: None,
        };
        assert!(matches!(
            extract_keywords(&gw, &TemplateSet::default(), &sample, 8),
            Err(Error::EmptyKeywords)
        ));
    }

    proptest! {
        #[test]
        fn no_duplicates_or_empties(reply in "[a-cA-C ,\\n.-]{0,60}", cap in 1usize..10) {
            let kws = parse_keywords(&reply, cap);
            prop_assert!(kws.len() <= cap);
            for (i, k) in kws.iter().enumerate() {
                prop_assert!(!k.is_empty());
                prop_assert_eq!(k, &k.to_lowercase());
                prop_assert!(!kws[..i].contains(k));
            }
        }
    }
}
