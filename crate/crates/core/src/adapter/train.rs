use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{Ablation, AdapterConfig, AdapterParams, GraphAdapter, TrainConfig};
use crate::error::{Error, Result};
use crate::numerics::{adamw_step, AdamWConfig, OptimizerState, Precision};
use crate::tag::{Bundle, Graph};

/// One line of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    pub seconds: f64,
}

/// The neighborhood structure training and inference run on.
pub fn effective_graph(bundle: &Bundle, cfg: &AdapterConfig) -> Graph {
    if cfg.ablation == Ablation::NoGraph {
        Graph::self_loops_only(bundle.num_nodes())
    } else if cfg.self_loops && !bundle.graph.self_loops_added() {
        bundle.graph.add_self_loops()
    } else {
        bundle.graph.clone()
    }
}

pub fn train(
    bundle: &Bundle,
    adapter_cfg: &AdapterConfig,
    train_cfg: &TrainConfig,
) -> Result<(GraphAdapter, TrainHistory)> {
    train_with_log(bundle, adapter_cfg, train_cfg, |_| {})
}

/// Trains the adapter on the bundle's masked-token records.
///
/// Every epoch each record draws `sample_k` neighbors; the resulting
/// (record, neighbor) pairs are consumed in record order in batches of
/// `batch_pairs`, one AdamW step per batch. `on_epoch` sees each epoch's
/// mean per-pair loss.
pub fn train_with_log<F>(
    bundle: &Bundle,
    adapter_cfg: &AdapterConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(GraphAdapter, TrainHistory)>
where
    F: FnMut(&EpochLog),
{
    adapter_cfg.validate()?;
    train_cfg.validate()?;
    if bundle.masked.is_empty() {
        return Err(Error::invalid("bundle has no masked-token records"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let params = AdapterParams::init(adapter_cfg, bundle.embed_dim(), bundle.hidden_dim(), &mut rng);
    let mut adapter = GraphAdapter::new(adapter_cfg.clone(), params)?;
    if train_cfg.precision == Precision::F32 {
        adapter.params.round_to_f32();
    }
    let mut history = TrainHistory::default();
    if adapter_cfg.ablation == Ablation::NoSsl || train_cfg.epochs == 0 {
        return Ok((adapter, history));
    }

    let graph = effective_graph(bundle, adapter_cfg);
    let records = &bundle.masked;
    let mut pairs_per_epoch = 0usize;
    for r in records {
        let deg = graph.degree(r.node)?;
        if deg == 0 {
            return Err(Error::EmptyNeighborhood(r.node));
        }
        pairs_per_epoch += deg.min(train_cfg.sample_k);
    }
    let steps_per_epoch = pairs_per_epoch.div_ceil(train_cfg.batch_pairs);
    let total_steps = (steps_per_epoch * train_cfg.epochs) as f64;
    let warmup_steps = (train_cfg.warmup_fraction * total_steps).round() as u64;
    let mut state = OptimizerState::new(
        adapter.params.num_params(),
        AdamWConfig {
            lr: train_cfg.lr,
            weight_decay: train_cfg.weight_decay,
            warmup_steps,
            ..AdamWConfig::default()
        },
    );

    let clock = Clock::start();
    let mut pairs = Vec::with_capacity(pairs_per_epoch);
    for epoch in 0..train_cfg.epochs {
        let epoch_clock = Clock::start();
        pairs.clear();
        for (idx, r) in records.iter().enumerate() {
            for j in graph.sample_neighbors(r.node, train_cfg.sample_k, &mut rng)? {
                pairs.push((idx, j));
            }
        }
        let mut loss_sum = 0.0;
        for batch in pairs.chunks(train_cfg.batch_pairs) {
            let (loss, grads) =
                adapter.loss_and_grads_threaded(&bundle.head, &bundle.embeddings, records, batch, train_cfg.threads)?;
            if !loss.is_finite() {
                return Err(Error::NumericalFailure(format!("loss became {loss} in epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            let (flat, next) = adamw_step(&adapter.params.to_flat(), &grads.to_flat(), &state)?;
            state = next;
            adapter.params.assign_flat(&flat);
            if train_cfg.precision == Precision::F32 {
                adapter.params.round_to_f32();
            }
        }
        let mean_loss = loss_sum / pairs.len() as f64;
        history.epoch_losses.push(mean_loss);
        on_epoch(&EpochLog {
            epoch: epoch + 1,
            mean_loss,
            seconds: epoch_clock.elapsed(),
        });
    }
    history.steps = state.step;
    history.seconds = clock.elapsed();
    Ok((adapter, history))
}

/// Wall clock that reads zero where no monotonic clock exists (wasm).
struct Clock {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Clock {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.start.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}
