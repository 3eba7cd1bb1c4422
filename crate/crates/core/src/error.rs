use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("probability vector is empty")]
    Empty,
    #[error("probability entry {index} is negative or not finite: {value}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("batch of {batch} exceeds population of {population}")]
    BatchTooLarge { batch: usize, population: usize },
    #[error("inclusion probability {inclusion} of index {index} exceeds 1")]
    InclusionOverflow { index: usize, inclusion: f64 },
    #[error("population of {0} is too large to enumerate")]
    TooLargeToEnumerate(usize),
    #[error("index {index} drawn with zero probability")]
    ZeroProbabilityDrawn { index: usize },
    #[error("per-element means or variances are missing")]
    MissingMoments,
    #[error("invalid pair-inclusion matrix: {0}")]
    InvalidPairMatrix(String),
    #[error("invalid covariance for agent {agent}: {reason}")]
    InvalidCovariance { agent: usize, reason: String },
    #[error("linear system is singular (condition number {condition:e})")]
    SingularSystem { condition: f64 },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("pool of {pool} samples cannot fill {agents} shards of at least {min_size}")]
    PoolTooSmall {
        pool: usize,
        agents: usize,
        min_size: usize,
    },
    #[error("non-participant mass {mass} leaves nothing for participants")]
    MassOverflow { mass: f64 },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("iterate diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scheme `{scheme}` is not available for this problem: {reason}")]
    UnsupportedScheme { scheme: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether the error stems from the configuration rather than from running it.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_) | Self::UnsupportedScheme { .. })
    }
}
