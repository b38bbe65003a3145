//! Query reformulation retrieval with entity expansion and learned entity
//! weighting.
//!
//! The pipeline: parse an entity catalog ([`catalog`]), build the entity
//! co-occurrence knowledge base ([`eekb`]), expand query entities with their
//! top neighbors ([`expansion`]), predict per-entity weight levels with a
//! hierarchical attention model ([`weight`]), and use expansions plus weights
//! to re-rank reformulation candidates retrieved lexically or by embedding
//! ([`retrieval`]), evaluated by precision@K ([`eval`]). [`synth`] generates
//! the deterministic corpus the end-to-end evaluation runs on.

pub mod catalog;
pub mod eekb;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod nn;
pub mod retrieval;
pub mod synth;
pub mod weight;

pub use error::{QeewError, Result};
