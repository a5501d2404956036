use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{few_shot_split, train_classifier, ClassifierConfig, ClassifierKind};
use crate::numerics::{mean_std, DenseMatrix};
use crate::tag::Graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewShotConfig {
    pub shots_per_class: usize,
    pub partitions: usize,
    pub repeats: usize,
    pub test_fraction: f64,
    pub classifier: ClassifierKind,
    pub classifier_config: ClassifierConfig,
    pub seed: u64,
    pub threads: usize,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            shots_per_class: 10,
            partitions: 5,
            repeats: 5,
            test_fraction: 0.6,
            classifier: ClassifierKind::Mlp,
            classifier_config: ClassifierConfig::default(),
            seed: 0,
            threads: 1,
        }
    }
}

/// Values of every (partition, repeat) run and their mean ± population std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn new(metric: impl Into<String>, values: Vec<f64>, config: serde_json::Value) -> Self {
        let (mean, std) = mean_std(&values);
        Self {
            metric: metric.into(),
            values,
            mean,
            std,
            config,
        }
    }
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `partitions × repeats` few-shot runs: one split per partition, one
/// classifier initialization per repeat.
pub fn run_protocol(x: &DenseMatrix, graph: &Graph, labels: &[usize], cfg: &FewShotConfig) -> Result<MetricsReport> {
    if cfg.partitions == 0 || cfg.repeats == 0 || cfg.shots_per_class == 0 {
        return Err(Error::invalid("partitions, repeats and shots must be at least 1"));
    }
    let splits = (0..cfg.partitions)
        .map(|p| {
            few_shot_split(
                labels,
                cfg.shots_per_class,
                cfg.test_fraction,
                mix_seed(cfg.seed, p as u64, 0),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<(usize, usize)> = (0..cfg.partitions)
        .flat_map(|p| (0..cfg.repeats).map(move |r| (p, r)))
        .collect();
    let values = crate::parallel::ordered_map(&runs, cfg.threads, |&(p, r)| {
        train_classifier(
            x,
            graph,
            labels,
            &splits[p],
            cfg.classifier,
            &cfg.classifier_config,
            mix_seed(cfg.seed, p as u64, r as u64 + 1),
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let metric = if classes == 2 { "auc" } else { "accuracy" };
    let config = serde_json::to_value(cfg).expect("config serializes");
    Ok(MetricsReport::new(metric, values, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DenseMatrix, Graph, Vec<usize>) {
        let n = 60;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let data: Vec<f64> = labels.iter().flat_map(|&l| [l as f64, (l * 7 % 5) as f64]).collect();
        (
            DenseMatrix::from_vec(n, 2, data).unwrap(),
            Graph::empty(n).add_self_loops(),
            labels,
        )
    }

    #[test]
    fn single_run_has_zero_std() {
        let (x, g, labels) = toy();
        let cfg = FewShotConfig {
            partitions: 1,
            repeats: 1,
            shots_per_class: 2,
            classifier_config: ClassifierConfig {
                epochs: 5,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = run_protocol(&x, &g, &labels, &cfg).unwrap();
        assert_eq!(r.values.len(), 1);
        assert_eq!(r.std, 0.0);
        assert_eq!(r.metric, "accuracy");
    }

    #[test]
    fn five_by_five_records_25_values() {
        let (x, g, labels) = toy();
        let cfg = FewShotConfig {
            shots_per_class: 2,
            classifier_config: ClassifierConfig {
                epochs: 3,
                hidden: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = run_protocol(&x, &g, &labels, &cfg).unwrap();
        assert_eq!(r.values.len(), 25);
        let (m, s) = mean_std(&r.values);
        assert_eq!((m, s), (r.mean, r.std));
        assert_eq!(r.config["partitions"], 5);
        let threaded = run_protocol(&x, &g, &labels, &FewShotConfig { threads: 3, ..cfg }).unwrap();
        assert_eq!(threaded.values, r.values);
    }
}
