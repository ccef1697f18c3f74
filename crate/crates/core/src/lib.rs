//! Memory-based temporal GNN training with a serialized node-memory daemon
//! and mini-batch, epoch and memory parallelism.

pub mod error;
pub mod gradcheck;
pub mod memstore;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod synth;
pub mod tgraph;
pub mod trainer;

pub use error::{Error, Result};
