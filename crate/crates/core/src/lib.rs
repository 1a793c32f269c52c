//! Audit how well gender-conditioned and neutral LLM annotations of misinformation
//! claims track the ratings of human men and women.

pub mod collect;
pub mod dataset;
pub mod ingest;
pub mod prompt;
pub mod report;
pub mod stats;
