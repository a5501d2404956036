//! Graph-aware, prompt-conditioned node features for text-attributed graphs.
//!
//! A small adapter is trained on cached masked-token hidden states of a
//! frozen masked language model so that its prediction head also accounts
//! for the sentence embeddings of a node's neighbors. Prompt hidden states
//! are then decoded through the trained adapter into vocabulary
//! distributions, which serve as node features.

pub mod adapter;
pub mod error;
pub mod eval;
pub mod features;
pub mod lm_head;
pub mod numerics;
mod parallel;
pub mod synthetic;
pub mod tag;

pub use error::{Error, Result};
pub use parallel::threads_from_env;
