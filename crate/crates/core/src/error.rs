use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vacuum input has no polarization (mu_h + mu_v = 0)")]
    DegenerateInput,

    #[error("value {value} outside domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("invalid region layout: {0}")]
    InvalidLayout(String),

    #[error("invalid channel parameters: {0}")]
    InvalidChannel(String),

    #[error("photon number {n} exceeds truncation order {n_max}")]
    Truncation { n: usize, n_max: usize },

    #[error("integrand returned a non-finite value at {point:?}")]
    NonFiniteIntegrand { point: Vec<f64> },

    #[error("invalid integration request: {0}")]
    InvalidRequest(String),

    #[error("regions {a} and {b} belong to different bases")]
    BasisMismatch { a: String, b: String },

    #[error("inconsistent statistics: {0}")]
    InconsistentStatistics(String),

    #[error("linear program infeasible; conflicting rows {rows:?}")]
    Infeasible { rows: Vec<usize> },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("bad cache file: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
