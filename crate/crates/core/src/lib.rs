//! Benchmark generation for text anomaly detection: a Teacher writes
//! problems, an Orchestrator validates and escalates them, and a Student
//! attempts them until the difficulty ladder is exhausted.

pub mod agent;
pub mod config;
pub mod domain;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod protocol;
pub mod store;
pub mod taskspec;

pub use domain::*;
pub use error::*;
