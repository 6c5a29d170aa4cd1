//! Dual-view click-through-rate model.
//!
//! A candidate item is scored against a user's behavior sequence from
//! two complementary angles: a fine-grained one — the k behaviors most
//! similar to the target are selected (with straight-through gradients
//! through the discrete choice) and interact with the contextual
//! features token-by-token — and a coarse-grained one, a histogram of
//! all similarity scores embedded as a single interest-distribution
//! token. A small transformer stack with per-token feed-forward nets
//! mixes the tokens and a sigmoid head produces the click probability.
//!
//! The crate also ships the surrounding machinery: a behavior-log
//! pipeline (parsing, labeling, negative sampling, batching, binary
//! sample cache), a planted-signal synthetic data generator, ranking
//! metrics (AUC / grouped AUC / log loss), a deterministic trainer with
//! checkpointing, ablation variants, hyperparameter sweeps, and an
//! attention-cost benchmark.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod core_behaviors;
pub mod data;
pub mod embed;
pub mod error;
pub mod interaction;
pub mod interest;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use config::{TrainConfig, Variant};
pub use error::{CdnetError, Result};
pub use model::CdnetModel;
