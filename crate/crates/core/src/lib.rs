//! Metric-driven learning to rank for latent-factor recommenders.
//!
//! The crate trains matrix-factorization and factorization-machine scorers by
//! optimizing ranking metrics directly, either pairwise through λ-gradients or
//! listwise through smoothed ranks, and can reweight users by a cost derived
//! from their mainstreamness to reduce the utility gap between mainstream and
//! niche users.

pub mod data;
pub mod error;
pub mod mainstream;
pub mod metrics;
pub mod model;
pub mod pairwise;
pub mod listwise;
pub mod report;
pub mod seed;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
