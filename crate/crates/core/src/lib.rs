//! Hybrid livestream moderation engine, desk scale.
//!
//! Two detection paths run over 20-second query clips cut from incoming
//! streams: a preset-violation classifier and a reference-matching path
//! (embedding -> HNSW retrieval -> multimodal re-ranking -> temporal
//! clip-match aggregation). Training-side math (contrastive pretraining,
//! knowledge distillation) lives here too so the ablation harness can
//! reproduce the directional results on synthetic data.

pub mod aggregate;
pub mod contrastive;
pub mod distill;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod index;
pub mod losses;
pub mod pipeline;
pub mod rerank;
pub mod report;
pub mod rng;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
