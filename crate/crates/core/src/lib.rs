//! Nonparametric Bayesian negative binomial factor analysis (NBFA) and its
//! gamma-negative binomial process baselines, with three interchangeable
//! Gibbs samplers, exact discrete-distribution primitives, heldout-perplexity
//! evaluation, and feature extraction.

pub mod corpus;
pub mod dist;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod samplers;
pub mod special;

pub use error::{Error, Result};
pub use rng::RngStream;
