use std::io::Write;

use serde::Serialize;

use super::report::{evaluate_split, Evaluation, Summary};
use crate::domain::{Sample, StageToggles};
use crate::error::Result;
use crate::pipeline::Pipeline;

pub const ABLATION_ROWS: [(&str, StageToggles); 4] = [
    ("baseline", StageToggles::BASELINE),
    ("lnq", StageToggles::LNQ),
    ("lnq_krf", StageToggles::LNQ_KRF),
    ("lnq_krf_ski", StageToggles::FULL),
];

pub struct AblationRow {
    pub name: &'static str,
    pub toggles: StageToggles,
    pub evaluation: Evaluation,
}

#[derive(Serialize)]
struct RowRecord<'a> {
    row: &'a str,
    toggles: StageToggles,
    config_digest: &'a str,
    summary: &'a Summary,
}

/// One evaluation per stage combination, all other settings shared.
pub fn run_ablation(pipeline: &Pipeline<'_>, samples: &[Sample]) -> Result<Vec<AblationRow>> {
    ABLATION_ROWS
        .iter()
        .map(|&(name, toggles)| {
            let mut config = pipeline.config.clone();
            config.toggles = toggles;
            Ok(AblationRow {
                name,
                toggles,
                evaluation: evaluate_split(&pipeline.with_config(config), samples)?,
            })
        })
        .collect()
}

pub fn write_ablation(rows: &[AblationRow], mut out: impl Write) -> std::io::Result<()> {
    for r in rows {
        let rec = RowRecord {
            row: r.name,
            toggles: r.toggles,
            config_digest: &r.evaluation.report.header.config_digest,
            summary: &r.evaluation.report.summary,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
