//! Unsupervised decipherment of a lost script into a known related language.
//!
//! A character-level sequence-to-sequence cognate model is trained jointly
//! with a minimum-cost-flow word aligner in an EM-style loop: the flow state
//! weights the mixture likelihood the model maximizes, and expected edit
//! distances between model samples and known words price the flow edges.

pub mod corpus;
pub mod cost;
pub mod error;
pub mod eval;
pub mod flow;
pub mod selftest;
pub mod seq2seq;
pub mod trainer;

pub use error::{Error, Result};
