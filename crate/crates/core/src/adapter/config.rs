use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Gate replaced by the constant 0.5.
    NoGate,
    /// Every neighborhood reduced to the node itself.
    NoGraph,
    /// Adapter left at its initialization.
    NoSsl,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no_gate" => Ok(Self::NoGate),
            "no_graph" => Ok(Self::NoGraph),
            "no_ssl" => Ok(Self::NoSsl),
            other => Err(Error::invalid(format!("unknown ablation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::NoGate => "no_gate",
            Self::NoGraph => "no_graph",
            Self::NoSsl => "no_ssl",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    /// Width of the gate projections `W_q`, `W_k`.
    pub d_a: usize,
    /// Number of linear layers in the influence MLP.
    pub mlp_depth: usize,
    pub mlp_hidden: usize,
    pub activation: Activation,
    pub ablation: Ablation,
    /// Add self-loops before training and inference.
    pub self_loops: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            d_a: 256,
            mlp_depth: 2,
            mlp_hidden: 64,
            activation: Activation::Relu,
            ablation: Ablation::Full,
            self_loops: true,
        }
    }
}

impl AdapterConfig {
    /// Sizes used at full scale with a large masked LM (`mlp_hidden` is
    /// dataset-dependent: 7680 for the citation graph, 3840 otherwise).
    pub fn full_scale(mlp_hidden: usize) -> Self {
        Self {
            d_a: 256,
            mlp_depth: 2,
            mlp_hidden,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_a == 0 {
            return Err(Error::invalid("d_a must be positive"));
        }
        if self.mlp_depth == 0 {
            return Err(Error::invalid("mlp_depth must be at least 1"));
        }
        if self.mlp_depth > 1 && self.mlp_hidden == 0 {
            return Err(Error::invalid("mlp_hidden must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_pairs: usize,
    /// Neighbors sampled per masked token per epoch.
    pub sample_k: usize,
    /// Fraction of tokens masked upstream when the cache is built; carried
    /// for provenance, the trainer consumes whatever records the bundle holds.
    pub mask_ratio: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Worker threads for per-pair gradient evaluation. Results do not
    /// depend on this value.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_pairs: 10_000,
            sample_k: 4,
            mask_ratio: 0.10,
            lr: 5e-3,
            weight_decay: 0.01,
            warmup_fraction: 0.10,
            seed: 0,
            precision: Precision::F64,
            threads: 1,
        }
    }
}

impl TrainConfig {
    /// Full-scale settings: learning rate 1e-6 and 20% masking.
    pub fn full_scale() -> Self {
        Self {
            lr: 1e-6,
            mask_ratio: 0.20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::invalid("mask_ratio must lie in (0, 1)"));
        }
        if self.batch_pairs == 0 {
            return Err(Error::invalid("batch_pairs must be at least 1"));
        }
        if self.sample_k == 0 {
            return Err(Error::invalid("sample_k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup_fraction must lie in [0, 1]"));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::invalid("lr must be positive and weight_decay non-negative"));
        }
        Ok(())
    }
}
