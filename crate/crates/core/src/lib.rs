//! General-Bayes estimation of conditional treatment effects at a sharp
//! regression-discontinuity cutoff.

pub mod bandwidth;
pub mod bart;
pub mod cli;
pub mod data;
pub mod dgp;
pub mod error;
pub mod eval;
pub mod gibbs;
pub mod locallinear;
pub mod rng;
pub mod stats;
pub mod trees;

pub use error::{Error, Result};
