//! Cold-start item recommendation with oracle-generated pairwise
//! augmentation.
//!
//! An embedding recommender is trained with an in-batch sampled-softmax
//! loss plus a BPR-style pairwise loss over synthetic `(user, pos, neg)`
//! preferences between cold items. The preferences come from a pluggable
//! [`augmenter::PreferenceOracle`]: a remote LLM endpoint, a lexical
//! TF-IDF heuristic, a replay file, or the ground truth of a synthetic
//! world.

// `!(x > 0.0)` is how these checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augmenter;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod linalg;
pub mod model;
pub mod synthworld;
pub mod training;

pub use error::{Error, Result};
pub use exec::Exec;
