//! Knowledge-graph embedding engine.
//!
//! * [`graph`] loads and indexes triples.
//! * [`anchors`] tokenizes entities into anchor / neighbor / center tokens.
//! * [`scoring`] holds the scoring kernels (InterHT, InterHT+ and baselines).
//! * [`encoder`] turns token sets into entity vectors with one transformer block.
//! * [`training`] implements negative sampling, the margin loss, Adam and checkpoints.
//! * [`eval`] ranks queries and reports MRR / Hits@K.

pub mod anchors;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod real;
pub mod scoring;
pub mod training;
