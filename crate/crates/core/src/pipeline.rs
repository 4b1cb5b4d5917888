//! Per-sample orchestration of every stage, producing an auditable trace.

use serde::{Deserialize, Serialize};

use crate::domain::{normalize_answer, NormalizationTable, PipelineConfig, Sample};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, TemplateSet};
use crate::knowledge_filter::{
    extract_visual_details, filter_segments, select_h, to_visual_question, Segment, VisualDetails, VisualQuestion,
};
use crate::reasoner::{
    build_visual_context, caption_image, gate_and_answer, EnsembleRequest, ExampleSelector, GateDecision, Prediction,
};
use crate::retrieval::{
    build_low_noise_query, build_verbose_query, extract_keywords, search_top_r, Document, KnowledgeIndex, ScoredDoc,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    LowNoise,
    Verbose,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub kind: QueryKind,
    pub text: String,
    pub question_part: String,
    pub keyword_part: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberTrace {
    pub j: usize,
    pub answer: String,
    pub normalized: String,
    pub f: f64,
    pub s: f64,
    pub request_digest: String,
}

impl From<&Prediction> for MemberTrace {
    fn from(p: &Prediction) -> Self {
        Self {
            j: p.j_index,
            answer: p.answer.raw.clone(),
            normalized: p.answer.normalized.clone(),
            f: p.f,
            s: p.s,
            request_digest: p.completion.request_digest.clone(),
        }
    }
}

/// Everything one sample went through, in the order the stages ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub sample_id: String,
    pub config_digest: String,
    pub template_versions: Vec<String>,
    pub captions: Vec<String>,
    pub visual_question: VisualQuestion,
    pub visual_details: VisualDetails,
    pub keywords: Option<Vec<String>>,
    pub query: Option<QueryTrace>,
    pub retrieved: Vec<ScoredDoc>,
    pub segments: Option<Vec<Segment>>,
    /// Items placed in the knowledge block: selected segments, or raw documents without filtering.
    pub knowledge: Vec<String>,
    pub examples: Vec<Vec<String>>,
    pub free: Vec<MemberTrace>,
    pub with_knowledge: Vec<MemberTrace>,
    pub gate: Option<GateDecision>,
    pub knowledge_used: bool,
    pub winning_j: usize,
    pub answer: String,
    pub normalized_answer: String,
    pub flags: Vec<String>,
}

/// Template versions, backend identities, normalization table version and corpus digest.
pub fn identity(templates: &TemplateSet, gateway: &Gateway, index: Option<&KnowledgeIndex>) -> Vec<String> {
    let mut out = templates.versions();
    out.extend(gateway.identities());
    out.push(format!("normalization={}", NormalizationTable::standard().version()));
    if let Some(index) = index {
        out.push(format!("corpus={}", index.corpus_digest()));
    }
    out
}

/// Digest of the pipeline settings together with everything in [`identity`].
/// Computable before any model call.
pub fn config_digest(
    config: &PipelineConfig,
    templates: &TemplateSet,
    gateway: &Gateway,
    index: Option<&KnowledgeIndex>,
) -> String {
    let id = identity(templates, gateway, index);
    config.digest(&id.iter().map(String::as_str).collect::<Vec<_>>())
}

pub struct Pipeline<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub index: Option<&'a KnowledgeIndex>,
    pub selector: &'a ExampleSelector,
    pub config: PipelineConfig,
    pub strict: bool,
}

impl Pipeline<'_> {
    /// Identity strings folded into the config digest.
    pub fn identity(&self) -> Vec<String> {
        identity(self.templates, self.gateway, self.index)
    }

    pub fn config_digest(&self) -> String {
        config_digest(&self.config, self.templates, self.gateway, self.index)
    }

    pub fn with_config(&self, config: PipelineConfig) -> Self {
        Pipeline {
            gateway: self.gateway,
            templates: self.templates,
            index: self.index,
            selector: self.selector,
            config,
            strict: self.strict,
        }
    }

    pub fn run_sample(&self, sample: &Sample) -> Result<SampleTrace> {
        self.run_inner(sample, &self.config_digest()).map_err(|e| Error::Sample {
            sample_id: sample.sample_id.clone(),
            source: Box::new(e),
        })
    }

    pub(crate) fn run_inner(&self, sample: &Sample, config_digest: &str) -> Result<SampleTrace> {
        let cfg = &self.config;
        let toggles = cfg.toggles;
        let mut flags = Vec::new();

        let captions = caption_image(self.gateway, self.templates, &sample.image)?;
        if captions.empty {
            flags.push("empty_captions".to_string());
        }
        let q_v = to_visual_question(self.gateway, self.templates, &sample.question)?;
        if q_v.fallback {
            flags.push("empty_transform".to_string());
        }
        let a_v = extract_visual_details(self.gateway, &sample.image, &q_v)?;
        if a_v.empty {
            flags.push("empty_details".to_string());
        }
        let context = build_visual_context(captions.clone(), a_v.clone());

        let mut keywords = None;
        let mut query = None;
        let mut retrieved = Vec::new();
        let mut segments = None;
        let mut knowledge = Vec::new();
        if toggles.knowledge {
            let index = self
                .index
                .ok_or_else(|| Error::Config("knowledge stages enabled but no index loaded".into()))?;
            let q = if toggles.lnq {
                let ks = match extract_keywords(self.gateway, self.templates, sample, cfg.keyword_cap) {
                    Ok(ks) => Some(ks),
                    Err(Error::EmptyKeywords) => {
                        flags.push("empty_keywords".to_string());
                        None
                    }
                    Err(e) => return Err(e),
                };
                let lq = build_low_noise_query(&sample.question, ks.as_ref());
                keywords = Some(ks.map(|k| k.keywords).unwrap_or_default());
                QueryTrace {
                    kind: QueryKind::LowNoise,
                    text: lq.text,
                    question_part: lq.question_part,
                    keyword_part: lq.keyword_part,
                }
            } else {
                QueryTrace {
                    kind: QueryKind::Verbose,
                    text: build_verbose_query(&sample.question, &captions.captions, &a_v.text),
                    question_part: sample.question.clone(),
                    keyword_part: String::new(),
                }
            };
            let result = search_top_r(index, self.gateway, &q.text, cfg.r)?;
            let docs: Vec<&Document> = result
                .ranked
                .iter()
                .map(|d| index.document(&d.doc_id).expect("ranked ids come from the index"))
                .collect();
            if toggles.krf {
                let set = filter_segments(self.gateway, self.templates, &docs, &sample.question, &a_v)?;
                if set.empty {
                    flags.push("empty_segments".to_string());
                }
                knowledge = select_h(&set, cfg.h, cfg.sample_mode, cfg.seed, &sample.sample_id).segments;
                segments = Some(set.segments);
            } else {
                knowledge = docs.iter().take(cfg.h).map(|d| d.text.trim().to_string()).collect();
            }
            retrieved = result.ranked;
            query = Some(q);
        }

        let example_sets = self.selector.select_all(sample, self.gateway, cfg.n, cfg.m)?;
        if example_sets.iter().any(|s| s.clamped) {
            flags.push("examples_clamped".to_string());
        }
        let req = EnsembleRequest {
            gateway: self.gateway,
            templates: self.templates,
            sample,
            context: &context,
            examples: &example_sets,
            aggregation: cfg.aggregation,
            strict: self.strict,
        };
        let fa = gate_and_answer(&req, &knowledge, &toggles, cfg.tau)?;
        for (branch, j, err) in &fa.dropped {
            flags.push(format!("dropped_{branch}_{j}: {err}"));
        }

        Ok(SampleTrace {
            sample_id: sample.sample_id.clone(),
            config_digest: config_digest.to_string(),
            template_versions: self.templates.versions(),
            captions: captions.captions,
            visual_question: q_v,
            visual_details: a_v,
            keywords,
            query,
            retrieved,
            segments,
            knowledge,
            examples: example_sets
                .iter()
                .map(|s| s.examples.iter().map(|e| e.sample_id.clone()).collect())
                .collect(),
            free: fa.free.iter().map(MemberTrace::from).collect(),
            with_knowledge: fa.with_knowledge.iter().map(MemberTrace::from).collect(),
            gate: fa.gate,
            knowledge_used: fa.knowledge_used,
            winning_j: fa.winning_j,
            normalized_answer: normalize_answer(&fa.answer.raw),
            answer: fa.answer.raw,
            flags,
        })
    }
}
