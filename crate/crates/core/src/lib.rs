//! Deliberative multi-agent classification of DMRS defense levels.

pub mod agents;
pub mod council;
pub mod consistency;
pub mod data;
pub mod label;
pub mod metrics;
pub mod overrides;
pub mod retrieval;
pub mod rng;
pub mod synth;

pub use label::{DmrsLabel, NUM_LABELS};
