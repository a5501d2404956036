//! Cached text-attributed graph: topology, sentence embeddings, masked-token
//! and prompt records, the frozen head, and the `GPB1` bundle format.

mod bundle;
pub(crate) mod format;
mod graph;

pub use bundle::{Bundle, MaskedTokenRecord, PromptRecord};
pub use format::{load_bundle, read_bundle, save_bundle, write_bundle, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use graph::Graph;
