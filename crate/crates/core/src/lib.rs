//! Road-network embedding and zone-level mode-share prediction.
//!
//! The pipeline: ingest an edge list, simplify its topology, sample
//! second-order biased random walks, train skip-gram embeddings with
//! negative sampling, aggregate node vectors to zone vectors, and fit and
//! evaluate mode-share predictors (multinomial logit, random forest,
//! gradient boosting) on baseline features, embeddings, and their
//! concatenation. A synthetic-city generator with a planted density signal
//! provides an end-to-end benchmark.

pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod ingest;
pub mod pipeline;
pub mod predictors;
pub mod seed;
pub mod synth;
pub mod walker;

pub use error::{Error, Result};
