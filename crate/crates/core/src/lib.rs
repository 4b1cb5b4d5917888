pub mod domain;
pub mod error;
pub mod evaluation;
pub mod fixture;
pub mod gateway;
pub mod knowledge_filter;
pub mod par;
pub mod pipeline;
pub mod reasoner;
pub mod retrieval;

pub use error::{Error, ErrorClass, Result};
