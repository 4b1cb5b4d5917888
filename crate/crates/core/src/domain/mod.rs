//! Value types shared across the pipeline, dataset ingestion and answer normalization.

mod config;
mod normalize;
mod sample;

pub use config::{Aggregation, PipelineConfig, SampleMode, SelectorKind, StageToggles};
pub use normalize::{normalize_answer, AnswerText, NormalizationTable};
pub use sample::{load_dataset, parse_dataset, write_dataset, ImageRef, Sample, Split};
