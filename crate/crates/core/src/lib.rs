//! Deterministic moment-matched uncertainty propagation through ReLU value
//! networks, the sampling-based pessimistic Bellman targets it replaces, the
//! computable Wasserstein/suboptimality bounds for both, and a small offline
//! model-based RL pipeline on toy control tasks.

pub mod bounds;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod gaussmm;
pub mod mc;
pub mod nn;
pub mod pevi;

pub use error::{Error, Result};
