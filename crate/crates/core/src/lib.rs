//! Exact policy-optimization laboratory for state-adversarial MDPs.

pub mod adversary;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod mdp;
pub mod mdp_file;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod textio;
pub mod trainers;

pub use error::{Error, Result};
