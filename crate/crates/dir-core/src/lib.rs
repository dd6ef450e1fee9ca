//! Discovering invariant rationales for graph classification.
//!
//! This crate implements the full training stack for learning graph
//! classifiers whose predictions rest on an explicit subgraph rationale that
//! stays valid out of distribution:
//!
//! - [`autodiff`]: reverse-mode differentiation over dense f64 tensors with a
//!   gradient-blocking `detach`, rebuilt per training step.
//! - [`graph`]: attributed graphs, disjoint-union batching, JSONL persistence.
//! - [`synth`]: the Spurious-Motif benchmark generator (label-carrying motif
//!   attached to a spuriously correlated base, bias-controlled).
//! - [`nn`]: edge-weighted message-passing layers, pooling, classifier heads.
//! - [`engine`]: the DIR objective — edge-mask rationale generator, top-r
//!   causal/spurious split, batch intervention bank, variance-penalized
//!   interventional risk with routed gradients.
//! - [`train`]: optimizers, training loops (DIR / DIR-Var / ERM / attention
//!   baseline), early stopping, metrics, CSV emission.

pub mod autodiff;
pub mod engine;
pub mod fdiff;
pub mod kernels;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod train;
