//! Guided temporal latent-variable model for irregular, partially observed
//! multivariate trajectories.

pub mod cluster;
pub mod cohort;
pub mod config;
pub mod forecast;
pub mod inference;
pub mod kernel;
pub mod model;
pub mod probe;
pub mod rng;
pub mod selftest;
pub mod synth;
