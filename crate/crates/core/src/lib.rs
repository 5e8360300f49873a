//! Fully-passive measurement-device-independent QKD simulator.

pub mod channel;
pub mod cubature;
pub mod decoy;
pub mod density;
pub mod error;
pub mod keyrate;
pub mod photon;
pub mod seeding;
pub mod source;
pub mod statistics;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
