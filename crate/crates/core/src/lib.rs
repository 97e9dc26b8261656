//! Quantile computation over a simulated uniform gossip network.
//!
//! The [`sim`] module provides a deterministic synchronous round engine. On
//! top of it sit the tournament protocols for approximate quantiles, the
//! aggregation primitives, the exact quantile protocol and a compacted
//! buffer for sketch-based estimates.

pub mod aggregates;
pub mod analysis;
pub mod error;
pub mod exact;
pub mod key;
pub mod oracle;
pub mod report;
pub mod sim;
pub mod sketch;
pub mod tournament;

pub use error::{Error, Result};
pub use key::{median3, NodeId, ValueKey};
pub use oracle::{rank_window, target_rank, Lmh, RankOracle};
pub use report::TrialReport;
