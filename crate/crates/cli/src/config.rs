use std::path::{Path, PathBuf};

use gprompt::adapter::{AdapterConfig, GradCheckConfig, TrainConfig};
use gprompt::eval::FewShotConfig;
use gprompt::features::DEFAULT_TOP_M;
use gprompt::synthetic::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run needs. Unknown keys are rejected; every field has a
/// default except the input paths, which may also come from flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub adapter: AdapterConfig,
    pub train: TrainConfig,
    pub few_shot: FewShotConfig,
    pub grad_check: GradCheckConfig,
    pub features: FeatureSettings,
    pub zero_shot: ZeroShotSettings,
    pub interpret: InterpretSettings,
    pub inputs: Inputs,
    /// Output directory. Not echoed into metrics so reruns into different
    /// directories stay byte-identical.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub prompt_id: u32,
    /// `std:M` or `vocab:PATH`.
    pub filter: String,
    pub pooling: String,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self {
            prompt_id: 0,
            filter: format!("std:{DEFAULT_TOP_M}"),
            pooling: "arithmetic".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroShotSettings {
    pub vocab_sets: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretSettings {
    pub top_k: usize,
}

impl Default for InterpretSettings {
    fn default() -> Self {
        Self { top_k: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub bundle: Option<PathBuf>,
    pub adapter: Option<PathBuf>,
    pub features: Option<PathBuf>,
    /// JSON array of class ids, or a synthetic truth sidecar.
    pub labels: Option<PathBuf>,
    /// When set, labels become `label == positive_label`.
    pub positive_label: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Column selection parsed from `std:M` / `vocab:PATH`.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterSpec {
    Std(usize),
    Vocab(PathBuf),
}

impl std::str::FromStr for FilterSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Config(format!("filter {s:?} is not std:M or vocab:PATH"));
        match s.split_once(':') {
            Some(("std", m)) => m.parse().map(FilterSpec::Std).map_err(|_| bad()),
            Some(("vocab", p)) if !p.is_empty() => Ok(FilterSpec::Vocab(PathBuf::from(p))),
            _ => Err(bad()),
        }
    }
}
