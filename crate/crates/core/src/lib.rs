//! Building blocks for consolidating many recommendation tasks into one
//! model family.
//!
//! - [`filter`]: Pareto-frontier feature selection over per-task importance.
//! - [`datasets`]: zero-padded cross-domain merge and hash-based
//!   attribution-window assignment.
//! - [`numerics`]: correlation loss, RMS normalization, SwishRN.
//! - [`sketch`]: DP bootstrap and beam search over sharding plans.
//! - [`ktap`]: TTL teacher-embedding store and traffic simulator.
//! - [`partitioner`]: rule-based grouping of domain/objective pairs.

pub mod datasets;
pub mod error;
pub mod filter;
pub mod hash;
pub mod ktap;
pub mod numerics;
pub mod partitioner;
pub mod sketch;
pub mod types;

pub use error::{Error, Result};
pub use hash::{seeded_rng, stable_hash};
pub use types::{FeatureId, Seed, TaskId, VirtualClock};
