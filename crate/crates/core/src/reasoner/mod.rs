//! Confidence-scored ensemble answering with selective knowledge integration.

mod confidence;
mod context;
mod ensemble;
mod examples;

pub use confidence::{confidence_score, fsum, S_FLOOR};
pub use context::{build_visual_context, caption_image, parse_captions, CaptionSet, VisualContext};
pub use ensemble::{
    answer_from_reply, argmax_f, gate_and_answer, render_answer_prompt, render_examples, render_knowledge,
    EnsembleRequest, FinalAnswer, GateDecision, Prediction,
};
pub use examples::{
    load_neighbors, parse_neighbors, write_neighbors, Example, ExampleSelector, ExampleSet, NeighborRecord, Neighbors,
};
