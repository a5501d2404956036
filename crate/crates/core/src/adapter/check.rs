use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adapter::{effective_graph, AdapterConfig, AdapterParams, GraphAdapter};
use crate::error::{Error, Result};
use crate::numerics::{finite_diff_check, DEFAULT_FD_EPS};
use crate::tag::Bundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    /// Masked records taken from the front of the bundle.
    pub max_records: usize,
    /// Neighbors sampled per record.
    pub sample_k: usize,
    /// Std of the Gaussian noise added to every initialized parameter, so
    /// that no gradient path is trivially zero.
    pub perturb_std: f64,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            max_records: 4,
            sample_k: 4,
            perturb_std: 0.1,
            eps: DEFAULT_FD_EPS,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub num_params: usize,
    pub num_pairs: usize,
}

/// Finite-difference check of the adapter loss gradient on a perturbed
/// initialization and a seeded sample of (record, neighbor) pairs.
pub fn grad_check(bundle: &Bundle, adapter_cfg: &AdapterConfig, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if bundle.masked.is_empty() {
        return Err(Error::invalid("bundle has no masked-token records"));
    }
    if cfg.max_records == 0 || cfg.sample_k == 0 {
        return Err(Error::invalid("max_records and sample_k must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = AdapterParams::init(adapter_cfg, bundle.embed_dim(), bundle.hidden_dim(), &mut rng);
    let noise = Normal::new(0.0, cfg.perturb_std).map_err(|e| Error::invalid(e.to_string()))?;
    let flat: Vec<f64> = params.to_flat().iter().map(|v| v + noise.sample(&mut rng)).collect();
    params.assign_flat(&flat);
    let template = GraphAdapter::new(adapter_cfg.clone(), params)?;

    let graph = effective_graph(bundle, adapter_cfg);
    let records = &bundle.masked[..cfg.max_records.min(bundle.masked.len())];
    let mut pairs = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        for j in graph.sample_neighbors(rec.node, cfg.sample_k, &mut rng)? {
            pairs.push((r, j));
        }
    }

    let eval = |theta: &[f64]| {
        let mut a = template.clone();
        a.params.assign_flat(theta);
        match a.loss_and_grads(&bundle.head, &bundle.embeddings, records, &pairs) {
            Ok((loss, g)) => (loss, g.to_flat()),
            Err(_) => (f64::NAN, Vec::new()),
        }
    };
    let max_rel_err = finite_diff_check(eval, &flat, cfg.eps)?;
    Ok(GradCheckReport {
        max_rel_err,
        tolerance: cfg.tolerance,
        pass: max_rel_err <= cfg.tolerance,
        num_params: flat.len(),
        num_pairs: pairs.len(),
    })
}
