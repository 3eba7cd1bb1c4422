//! Federated averaging with two-level importance sampling.
//!
//! Agents are drawn with normalized inclusion probabilities `p_k`, and each
//! participant draws its mini-batches with `p_n^{(k)}`. Horvitz-Thompson
//! reweighting keeps every gradient estimate unbiased. The crate holds the
//! samplers, the two risk families, the optimal and adaptive probability
//! rules, the training loop, the convergence constants and an experiment
//! harness.

pub mod analysis;
pub mod error;
pub mod estimator;
pub mod federated;
pub mod harness;
pub mod probabilities;
pub mod problems;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
