//! Ensemble answering and the confidence gate.

use serde::{Deserialize, Serialize};

use super::confidence::confidence_score;
use super::context::VisualContext;
use super::examples::ExampleSet;
use crate::domain::{Aggregation, AnswerText, Sample, StageToggles};
use crate::error::{Error, Result};
use crate::gateway::{Completion, DecodingParams, Gateway, TemplateId, TemplateSet};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer: AnswerText,
    pub completion: Completion,
    pub f: f64,
    pub s: f64,
    pub used_knowledge: bool,
    pub j_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub s_max: f64,
    pub tau: f64,
    pub knowledge_used: bool,
}

impl GateDecision {
    /// Inclusive: knowledge is used when `s_max <= tau`.
    pub fn new(s_max: f64, tau: f64) -> Self {
        Self {
            s_max,
            tau,
            knowledge_used: s_max <= tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub answer: AnswerText,
    pub winning_j: usize,
    /// Absent when the gate is disabled.
    pub gate: Option<GateDecision>,
    /// The answer was drawn from the knowledge-conditioned pool.
    pub knowledge_used: bool,
    pub free: Vec<Prediction>,
    pub with_knowledge: Vec<Prediction>,
    /// Ensemble members dropped in lenient mode, as `(branch, j, error)`.
    pub dropped: Vec<(String, usize, String)>,
}

impl FinalAnswer {
    pub fn all_predictions(&self) -> impl Iterator<Item = &Prediction> {
        self.free.iter().chain(&self.with_knowledge)
    }
}

/// Index of the member with the largest `f`; ties go to the lowest `j_index`.
pub fn argmax_f(pool: &[Prediction]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in pool.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let q = &pool[b];
                if p.f > q.f || (p.f == q.f && p.j_index < q.j_index) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

pub fn render_examples(set: &ExampleSet) -> String {
    let mut out = String::new();
    for e in &set.examples {
        out.push_str(&format!("Context: {}\nQuestion: {}\nAnswer: {}\n\n", e.context, e.question, e.answer));
    }
    out
}

/// `Knowledge:` followed by one `- item` line per segment; empty for no knowledge.
pub fn render_knowledge(items: &[String]) -> String {
    if items.is_empty() {
        return String::new();
    }
    let mut out = String::from("Knowledge:\n");
    for item in items {
        out.push_str("- ");
        out.push_str(item);
        out.push('\n');
    }
    out
}

pub fn render_answer_prompt(
    templates: &TemplateSet,
    question: &str,
    context: &VisualContext,
    examples: &ExampleSet,
    knowledge: &[String],
) -> Result<String> {
    templates.render(
        TemplateId::Answer,
        &[
            ("examples", &render_examples(examples)),
            ("context", &context.rendered),
            ("knowledge", &render_knowledge(knowledge)),
            ("question", question),
        ],
    )
}

/// First non-empty line of the reply, trimmed.
pub fn answer_from_reply(text: &str) -> &str {
    text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("")
}

pub struct EnsembleRequest<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub sample: &'a Sample,
    pub context: &'a VisualContext,
    pub examples: &'a [ExampleSet],
    pub aggregation: Aggregation,
    pub strict: bool,
}

impl EnsembleRequest<'_> {
    fn member(&self, set: &ExampleSet, knowledge: &[String]) -> Result<Prediction> {
        let prompt = render_answer_prompt(self.templates, &self.sample.question, self.context, set, knowledge)?;
        let completion = self
            .gateway
            .complete_chat_with(&prompt, None, true, &DecodingParams::answer())?;
        let (f, s) = confidence_score(&completion.token_logprobs, self.aggregation)?;
        Ok(Prediction {
            answer: AnswerText::new(answer_from_reply(&completion.text)),
            completion,
            f,
            s,
            used_knowledge: !knowledge.is_empty(),
            j_index: set.j_index,
        })
    }

    /// One prediction per example set. In lenient mode failed members are dropped and reported.
    pub fn run(&self, knowledge: &[String]) -> Result<(Vec<Prediction>, Vec<(usize, String)>)> {
        let results = par::map(self.examples, |set| (set.j_index, self.member(set, knowledge)));
        let mut preds = Vec::new();
        let mut dropped = Vec::new();
        let mut first_err = None;
        for (j, r) in results {
            match r {
                Ok(p) => preds.push(p),
                Err(e) if self.strict => return Err(e),
                Err(e) => {
                    tracing::warn!(sample = %self.sample.sample_id, j, error = %e, "ensemble member dropped");
                    dropped.push((j, e.to_string()));
                    first_err.get_or_insert(e);
                }
            }
        }
        match first_err {
            Some(e) if preds.is_empty() => Err(e),
            _ => Ok((preds, dropped)),
        }
    }
}

/// Runs the knowledge-free ensemble, evaluates the gate and, when it opens, the
/// knowledge-conditioned ensemble. With the gate disabled and knowledge stages on,
/// only the knowledge-conditioned ensemble runs; with knowledge stages off, only the
/// knowledge-free one. Empty knowledge makes both branches the same pool.
pub fn gate_and_answer(req: &EnsembleRequest<'_>, knowledge: &[String], toggles: &StageToggles, tau: f64) -> Result<FinalAnswer> {
    if req.examples.is_empty() {
        return Err(Error::InvalidValue {
            param: "m".into(),
            message: "must be >= 1".into(),
        });
    }
    let mut dropped = Vec::new();
    let mut tag = |branch: &str, d: Vec<(usize, String)>| {
        dropped.extend(d.into_iter().map(|(j, e)| (branch.to_string(), j, e)));
    };

    let (free, gate, with_knowledge, knowledge_used) = if !toggles.knowledge {
        let (free, d) = req.run(&[])?;
        tag("free", d);
        (free, None, Vec::new(), false)
    } else if !toggles.ski {
        let (kp, d) = req.run(knowledge)?;
        tag("knowledge", d);
        (Vec::new(), None, kp, true)
    } else {
        let (free, d) = req.run(&[])?;
        tag("free", d);
        let s_max = free.iter().map(|p| p.s).fold(f64::NEG_INFINITY, f64::max);
        let gate = GateDecision::new(s_max, tau);
        if !gate.knowledge_used {
            (free, Some(gate), Vec::new(), false)
        } else if knowledge.is_empty() {
            let kp = free.clone();
            (free, Some(gate), kp, true)
        } else {
            let (kp, d) = req.run(knowledge)?;
            tag("knowledge", d);
            (free, Some(gate), kp, true)
        }
    };

    let pool = if knowledge_used { &with_knowledge } else { &free };
    let best = &pool[argmax_f(pool).expect("ensemble pools are non-empty")];
    Ok(FinalAnswer {
        answer: best.answer.clone(),
        winning_j: best.j_index,
        gate,
        knowledge_used,
        free,
        with_knowledge,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Split;
    use crate::gateway::{MockRule, MockScript};
    use crate::knowledge_filter::VisualDetails;
    use crate::reasoner::context::{build_visual_context, parse_captions};
    use crate::reasoner::examples::Example;
    use proptest::prelude::*;

    fn pred(j: usize, f: f64) -> Prediction {
        Prediction {
            answer: AnswerText::new(format!("a{j}")),
            completion: Completion {
                text: format!("a{j}"),
                tokens: vec![format!("a{j}")],
                token_logprobs: vec![f],
                backend_id: "t".into(),
                request_digest: String::new(),
            },
            f,
            s: f.exp(),
            used_knowledge: false,
            j_index: j,
        }
    }

    fn sample() -> Sample {
        Sample {
            sample_id: "q1".into(),
            image: "park.jpg".into(),
            question: "What season is it?".into(),
            annotations: vec!["autumn".into()],
            split: Split::Eval,
            context: None,
        }
    }

    fn sets(m: usize) -> Vec<ExampleSet> {
        (1..=m)
            .map(|j| ExampleSet {
                examples: vec![Example {
                    sample_id: format!("e{j}"),
                    question: format!("example question {j}"),
                    context: String::new(),
                    answer: "x".into(),
                }],
                selector: Default::default(),
                j_index: j,
                clamped: false,
            })
            .collect()
    }

    fn context() -> VisualContext {
        build_visual_context(
            parse_captions("a park"),
            VisualDetails {
                text: "falling leaves".into(),
                empty: false,
            },
        )
    }

    #[test]
    fn gate_boundary_inclusive() {
        assert!(GateDecision::new(0.79, 0.8).knowledge_used);
        assert!(GateDecision::new(0.80, 0.8).knowledge_used);
        assert!(!GateDecision::new(0.81, 0.8).knowledge_used);
        assert!(!GateDecision::new(f64::from_bits(1), 0.0).knowledge_used);
        assert!(GateDecision::new(1.0, 1.0).knowledge_used);
    }

    #[test]
    fn argmax_prefers_lowest_j_on_ties() {
        assert_eq!(argmax_f(&[pred(1, -0.5), pred(2, -0.1), pred(3, -0.1)]), Some(1));
        assert_eq!(argmax_f(&[pred(3, -0.1), pred(2, -0.1)]), Some(1));
        assert_eq!(argmax_f(&[]), None);
    }

    #[test]
    fn knowledge_block_rendering() {
        let t = TemplateSet::default();
        let with = render_answer_prompt(&t, "Q?", &context(), &sets(1)[0], &["Leaves fall.".into(), "Snow.".into()]).unwrap();
        let without = render_answer_prompt(&t, "Q?", &context(), &sets(1)[0], &[]).unwrap();
        assert!(with.contains("Context: a park\n\nfalling leaves\nKnowledge:\n- Leaves fall.\n- Snow.\nQuestion: Q?\nAnswer:"));
        assert!(without.contains("Context: a park\n\nfalling leaves\nQuestion: Q?\nAnswer:"));
        assert_eq!(with.replace("Knowledge:\n- Leaves fall.\n- Snow.\n", ""), without);
        assert!(with.contains("Context: \nQuestion: example question 1\nAnswer: x\n\n"));
    }

    fn run_gate(script: Vec<MockRule>, m: usize, knowledge: &[String], toggles: StageToggles, tau: f64) -> FinalAnswer {
        let gw = Gateway::mock(MockScript::new(script).unwrap()).build();
        let t = TemplateSet::default();
        let s = sample();
        let ctx = context();
        let ex = sets(m);
        let req = EnsembleRequest {
            gateway: &gw,
            templates: &t,
            sample: &s,
            context: &ctx,
            examples: &ex,
            aggregation: Aggregation::Sum,
            strict: true,
        };
        gate_and_answer(&req, knowledge, &toggles, tau).unwrap()
    }

    fn scripted(free_s: &[f64], know_s: &[f64]) -> Vec<MockRule> {
        let mut rules = Vec::new();
        for (i, s) in know_s.iter().enumerate() {
            rules.push(MockRule::scored(
                format!("example question {}\nAnswer: x\n\nContext: a park\n\nfalling leaves\nKnowledge:", i + 1),
                format!("know{}", i + 1),
                vec![s.ln()],
            ));
        }
        for (i, s) in free_s.iter().enumerate() {
            rules.push(MockRule::scored(
                format!("example question {}\n", i + 1),
                format!("free{}", i + 1),
                vec![s.ln()],
            ));
        }
        rules
    }

    #[test]
    fn confident_free_pool_skips_knowledge() {
        let fa = run_gate(scripted(&[0.9, 0.85], &[0.3, 0.95]), 2, &["Leaves fall.".into()], StageToggles::FULL, 0.8);
        assert!(!fa.knowledge_used);
        assert_eq!(fa.answer.raw, "free1");
        assert!(fa.with_knowledge.is_empty());
        assert_eq!(fa.gate.unwrap().s_max, 0.9);
    }

    #[test]
    fn boundary_uses_knowledge_pool() {
        let fa = run_gate(scripted(&[0.8, 0.5], &[0.3, 0.95]), 2, &["Leaves fall.".into()], StageToggles::FULL, 0.8);
        assert!(fa.knowledge_used);
        assert_eq!(fa.answer.raw, "know2");
        assert_eq!(fa.winning_j, 2);
        assert_eq!(fa.free.len(), 2);
    }

    #[test]
    fn empty_knowledge_degenerates_to_free() {
        let fa = run_gate(scripted(&[0.5, 0.6], &[]), 2, &[], StageToggles::FULL, 0.8);
        assert!(fa.knowledge_used);
        assert_eq!(fa.answer.raw, "free2");
        assert_eq!(fa.free, fa.with_knowledge);
    }

    #[test]
    fn ski_off_and_knowledge_off() {
        let fa = run_gate(scripted(&[0.99], &[0.2]), 1, &["Leaves fall.".into()], StageToggles::LNQ_KRF, 0.8);
        assert!(fa.knowledge_used && fa.gate.is_none());
        assert_eq!(fa.answer.raw, "know1");
        let fa = run_gate(scripted(&[0.2], &[0.99]), 1, &["Leaves fall.".into()], StageToggles::LLM_ONLY, 0.8);
        assert!(!fa.knowledge_used && fa.gate.is_none());
        assert_eq!(fa.answer.raw, "free1");
    }

    #[test]
    fn tau_extremes() {
        let fa = run_gate(scripted(&[1e-300], &[0.5]), 1, &["k".into()], StageToggles::FULL, 0.0);
        assert!(!fa.knowledge_used);
        let fa = run_gate(scripted(&[1.0], &[0.5]), 1, &["k".into()], StageToggles::FULL, 1.0);
        assert!(fa.knowledge_used);
    }

    #[test]
    fn lenient_drops_failed_member() {
        let mut rules = scripted(&[0.5], &[]);
        rules.push(MockRule::text("example question 2", "no logprobs here"));
        let gw = Gateway::mock(MockScript::new(rules).unwrap()).build();
        let t = TemplateSet::default();
        let s = sample();
        let ctx = context();
        let ex = sets(2);
        let mut req = EnsembleRequest {
            gateway: &gw,
            templates: &t,
            sample: &s,
            context: &ctx,
            examples: &ex,
            aggregation: Aggregation::Sum,
            strict: true,
        };
        assert!(gate_and_answer(&req, &[], &StageToggles::LLM_ONLY, 0.8).is_err());
        req.strict = false;
        let fa = gate_and_answer(&req, &[], &StageToggles::LLM_ONLY, 0.8).unwrap();
        assert_eq!(fa.free.len(), 1);
        assert_eq!(fa.dropped.len(), 1);
        assert_eq!(fa.dropped[0].1, 2);
    }

    proptest! {
        #[test]
        fn argmax_attains_max_f(fs in proptest::collection::vec(-3i32..=0, 1..=5)) {
            let pool: Vec<Prediction> = fs.iter().enumerate().map(|(i, &f)| pred(i + 1, f as f64 * 0.5)).collect();
            let best = argmax_f(&pool).unwrap();
            let max = pool.iter().map(|p| p.f).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(pool[best].f, max);
            let first = pool.iter().position(|p| p.f == max).unwrap();
            prop_assert_eq!(pool[best].j_index, first + 1);
        }
    }
}
