//! The graph adapter: a sigmoid gate between a masked token's context hidden
//! state and an MLP-predicted neighbor influence, decoded through the frozen
//! LM head and pooled over the neighborhood.

mod check;
mod config;
mod io;
mod model;
mod params;
mod train;

#[cfg(test)]
mod tests;

pub use check::{grad_check, GradCheckConfig, GradCheckReport};
pub use config::{Ablation, Activation, AdapterConfig, TrainConfig};
pub use io::{adapter_from_bytes, adapter_to_bytes, load_adapter, save_adapter, ADAPTER_MAGIC, ADAPTER_VERSION};
pub use model::{pool, GraphAdapter, Pooling};
pub use params::{AdapterParams, Linear};
pub use train::{effective_graph, train, train_with_log, EpochLog, TrainHistory};
