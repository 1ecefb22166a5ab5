//! Interpretable model-predictive precooling: a single-zone thermal testbed,
//! neural surrogates, exact Shapley attribution, a two-hour MPC, an episode
//! recorder, and template-driven explanation documents.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod explain;
pub mod hub;
pub mod llm;
pub mod mpc;
pub mod shapley;
pub mod surrogate;
pub mod testbed;

pub use error::{Error, Result};
