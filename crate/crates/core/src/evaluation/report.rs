//! Evaluation over a split and its line-delimited report.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metric::{vqa_accuracy, SampleScore};
use crate::domain::{AnswerText, Sample, StageToggles};
use crate::error::{Error, Result};
use crate::par;
use crate::pipeline::{Pipeline, SampleTrace};
use crate::reasoner::fsum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub config_digest: String,
    pub template_versions: Vec<String>,
    pub toggles: StageToggles,
    pub identity: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scored: usize,
    pub failed: usize,
    /// `None` when no sample was scored.
    pub mean_accuracy: Option<f64>,
    pub knowledge_used_fraction: Option<f64>,
}

impl Summary {
    pub fn from_scores(scores: &[SampleScore], failed: usize) -> Self {
        let n = scores.len();
        let mean = |xs: Vec<f64>| (n > 0).then(|| fsum(&xs) / n as f64);
        Self {
            scored: n,
            failed,
            mean_accuracy: mean(scores.iter().map(|s| s.accuracy).collect()),
            knowledge_used_fraction: mean(scores.iter().map(|s| f64::from(u8::from(s.knowledge_used))).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub header: ReportHeader,
    pub scores: Vec<SampleScore>,
    pub failures: Vec<SampleFailure>,
    pub summary: Summary,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record<'a> {
    Header(&'a ReportHeader),
    Sample(&'a SampleScore),
    Failure(&'a SampleFailure),
    Summary(&'a Summary),
}

impl EvaluationReport {
    pub fn mean_accuracy(&self) -> Option<f64> {
        self.summary.mean_accuracy
    }

    /// Header, one record per sample (input order), failures, then the summary.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut emit = |r: Record<'_>| -> std::io::Result<()> {
            serde_json::to_writer(&mut out, &r)?;
            out.write_all(b"\n")
        };
        emit(Record::Header(&self.header))?;
        for s in &self.scores {
            emit(Record::Sample(s))?;
        }
        for f in &self.failures {
            emit(Record::Failure(f))?;
        }
        emit(Record::Summary(&self.summary))
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

pub fn score_trace(sample: &Sample, trace: &SampleTrace) -> Result<SampleScore> {
    let predicted = AnswerText::new(trace.answer.clone());
    let accuracy = vqa_accuracy(&predicted.raw, &sample.annotations)?;
    Ok(SampleScore {
        sample_id: sample.sample_id.clone(),
        match_count: super::metric::match_count(&predicted.raw, &sample.annotations),
        predicted,
        accuracy,
        knowledge_used: trace.knowledge_used,
    })
}

/// Outcome of one evaluation: the report plus the traces of scored samples.
pub struct Evaluation {
    pub report: EvaluationReport,
    pub traces: Vec<SampleTrace>,
}

/// Runs `run` on every sample (concurrently), scores the results and builds the report.
/// Strict mode returns the first failure in sample order; lenient mode records it.
pub fn evaluate_with<F>(samples: &[Sample], header: ReportHeader, strict: bool, run: F) -> Result<Evaluation>
where
    F: Fn(&Sample) -> Result<SampleTrace> + Sync,
{
    let outcomes = par::map(samples, |s| {
        run(s)
            .and_then(|t| score_trace(s, &t).map(|score| (t, score)))
            .map_err(|e| match e {
                Error::Sample { .. } => e,
                other => Error::Sample {
                    sample_id: s.sample_id.clone(),
                    source: Box::new(other),
                },
            })
    });
    let mut scores = Vec::new();
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok((t, s)) => {
                traces.push(t);
                scores.push(s);
            }
            Err(e) if strict => return Err(e),
            Err(e) => {
                let sample_id = match &e {
                    Error::Sample { sample_id, .. } => sample_id.clone(),
                    _ => String::new(),
                };
                tracing::warn!(%sample_id, error = %e.root(), "sample failed");
                failures.push(SampleFailure {
                    sample_id,
                    error: e.root().to_string(),
                });
            }
        }
    }
    let summary = Summary::from_scores(&scores, failures.len());
    Ok(Evaluation {
        report: EvaluationReport {
            header,
            scores,
            failures,
            summary,
        },
        traces,
    })
}

pub fn report_header(pipeline: &Pipeline<'_>) -> ReportHeader {
    ReportHeader {
        config_digest: pipeline.config_digest(),
        template_versions: pipeline.templates.versions(),
        toggles: pipeline.config.toggles,
        identity: pipeline.identity(),
    }
}

pub fn evaluate_split(pipeline: &Pipeline<'_>, samples: &[Sample]) -> Result<Evaluation> {
    let header = report_header(pipeline);
    let digest = header.config_digest.clone();
    evaluate_with(samples, header, pipeline.strict, |s| {
        pipeline.run_inner(s, &digest)
    })
}
