//! Single-loop deep actor-critic (SLDAC) for constrained Markov decision
//! processes.
//!
//! The actor takes constrained stochastic successive convex approximation
//! steps on quadratic surrogates of the long-run average costs. Each cost
//! index has a pair of critics: a raw network updated by projected TD(0) and
//! an iterate average used for policy-gradient estimation. Gradients are
//! estimated off-policy from a window of stored observations.
//!
//! Module map:
//! - [`nn`]: √m-scaled ReLU networks, feature maps and `.mlp` files
//! - [`policy`]: diagonal Gaussian policy and the parameter box
//! - [`critic`]: TD(0) critics, iterate averaging and MSBE estimates
//! - [`actor`]: replay window, surrogate estimation and convex subproblems
//! - [`envs`]: constrained LQR, MU-MIMO power control and a tabular chain oracle
//! - [`schedules`]: power-law step sizes and exponent-region validation
//! - [`harness`]: the outer loop, experiment configs and metrics
//! - [`diagnostics`]: finite-difference and oracle self-checks

pub mod actor;
pub mod critic;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod schedules;

pub use error::{Error, Result};

use rand::SeedableRng;

/// Random source used throughout; ChaCha keeps streams stable across platforms.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
