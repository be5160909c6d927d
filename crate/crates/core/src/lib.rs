//! Embedding-dataset toolkit: exact nearest-neighbor hard-pair mining with
//! percentile distance thresholds, QA-derived retrieval pairs with
//! keyword-overlap validation, a margin contrastive loss with a small
//! trainable projection head, and recall@k evaluation.
//!
//! Every stochastic step is driven by an explicit seed and per-item RNG
//! streams, so results do not depend on thread count or scheduling.

pub mod cli;
pub mod contrastive;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod knn;
pub mod mining;
pub mod rag;
mod rng;
pub mod stats;

pub use error::{Error, Result};

/// Version of the on-disk record formats written by this crate.
pub const FORMAT_VERSION: u32 = 1;
