//! Causal effect estimation with a self-censoring outcome.
//!
//! A randomized incentive to report the outcome makes it possible to test,
//! from observed data alone, whether a covariate set is both a backdoor
//! adjustment set and a shadow-variable adjustment set with the treatment as
//! the shadow variable. When such a set is found, the average causal effect
//! is estimated with a doubly inverse-probability-weighted estimator whose
//! response propensity comes from an odds-ratio factorization.

pub mod citest;
pub mod data;
pub mod dsep;
pub mod error;
pub mod estimate;
pub mod experiments;
pub mod glm;
pub mod pipeline;
pub mod search;
pub mod shadow;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};
