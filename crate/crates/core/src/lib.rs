//! Regime-conditioned node features over a causal graph, a shared variational
//! autoencoder for node embeddings, and pooled-then-fine-tuned gradient-boosted
//! trees for predicting the monthly direction of market indices.
//!
//! The crate is `no_std` and needs only `alloc`; file formats, the command line
//! and parallel execution live in the `indexcast` crate.

#![no_std]

extern crate alloc;

pub mod backtest;
pub mod error;
pub mod features;
pub mod gbdt;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod regime;
pub mod series;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};
