//! Domain-robustness measurement: drops, scenarios, moment checks and corpus divergence.

pub mod analysis;
pub mod cli;
pub mod divergence;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod theorem;
