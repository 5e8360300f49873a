//! Configuration-driven scans over the passive MDI-QKD simulator.

pub mod config;
pub mod runner;
pub mod verify;

pub use config::{ConfigError, Mode, RunConfig};
pub use runner::{run, RunError, RunSummary};
