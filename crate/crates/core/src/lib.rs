//! Deterministic round-based simulator for a trust-weighted federated
//! learning protocol: trust scoring, admission policy, Byzantine-robust
//! aggregation, content-addressed artifacts, and a replayable contract
//! state machine, driven by simulated worker nodes.

pub mod aggregation;
pub mod chain;
pub mod config;
pub mod coordinator;
pub mod error;
pub mod evaluation;
pub mod fixed;
pub mod harness;
pub mod node_sim;
pub mod policy;
pub mod store;
pub mod trust;

/// Stable node identifier used across all modules.
pub type NodeId = String;

pub use error::{Error, Result};
