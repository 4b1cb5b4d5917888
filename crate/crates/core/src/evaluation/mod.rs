//! Scoring, ablation and hyperparameter sweeps.

mod ablation;
mod metric;
mod report;
mod sweep;

pub use ablation::{run_ablation, write_ablation, AblationRow, ABLATION_ROWS};
pub use metric::{accuracy_from_counts, match_count, vqa_accuracy, SampleScore};
pub use report::{
    evaluate_split, evaluate_with, report_header, score_trace, Evaluation, EvaluationReport, ReportHeader,
    SampleFailure, Summary,
};
pub use sweep::{apply, parse_sweep_spec, sweep, write_sweep, SweepParam, SweepPoint};
