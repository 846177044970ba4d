//! Corpus engine for procedural image programs: ingest fragment-shader
//! snippets, render them, prune duplicates and static programs, mix frames
//! into training images, compute statistics, and stream batches.

pub mod cli;
pub mod corpus;
pub mod dedup;
pub mod image;
pub mod metrics;
pub mod mix;
pub mod render;
pub mod rng;
pub mod stream;
