//! Candidate generation for a telescoping retrieval pipeline.
//!
//! The crate implements a fielded inverted index ordered by static rank and
//! read in fixed-size blocks, match rules and match plans that drive the
//! index scan, a lightweight L1 scorer used for rank-and-prune, and a tabular
//! Q-learning agent that replaces static match plans with a policy choosing
//! match rules, reset, or stop at run time. Evaluation compares candidate-set
//! quality (NCG@100) and index blocks accessed against hand-crafted baseline
//! plans.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod index;
pub mod matching;
pub mod par;
pub mod pipeline;
pub mod ranker;
pub mod rl;
pub mod synth;

pub use error::{Error, Result};
