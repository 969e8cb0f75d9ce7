//! REGATHER: meta-path-free representation learning on heterogeneous
//! directed graphs.
//!
//! The pipeline decomposes a typed graph into first-order relation
//! matrices, composes higher-order relations as sparse products, and trains
//! a dual-level attention model (per-relation node attention fused by
//! relation attention) for semi-supervised vertex classification.
//!
//! Module map:
//! - [`graph`] — typed graph data model and text-file ingestion
//! - [`sparse`] — CSR kernels shared by composition and attention masks
//! - [`relation`] — relation-set construction (decompose, reverse,
//!   compose, prune, dedup, self-loops)
//! - [`autodiff`] — tape-based reverse-mode differentiation over the
//!   kernels the model needs
//! - [`model`] — the dual-level attention forward pass and checkpoints
//! - [`train`] — masked cross-entropy, Adam, early stopping, splits
//! - [`metrics`] — Macro-/Micro-F1 and multi-trial aggregation
//! - [`synth`] — planted-signal synthetic graphs for verification

pub mod autodiff;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod relation;
pub mod sparse;
pub mod train;
pub mod synth;
