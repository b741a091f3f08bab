//! cecdr — a desk-scale laboratory for causality-enhanced cross-domain
//! recommendation.
//!
//! The pipeline: generate a two-domain synthetic world with planted causal
//! structure, label cross-domain behavior pairs by calibrated similarity
//! (CLM), train a causal sequence model and a propensity model under the
//! partial-label causal loss (DCMM), fuse the frozen causal representation
//! into a target-domain recommender through attention and gating (CEM),
//! evaluate with leave-one-out HR@K / NDCG@K, and simulate the two-phase
//! serving scheme with a real-time representation cache.
//!
//! Everything is deterministic given a seed; see the `cecdr` binary for the
//! experiment-orchestration CLI.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod optim;
pub mod rng;
pub mod clm;
pub mod synth;

pub use error::{CecdrError, Result};
