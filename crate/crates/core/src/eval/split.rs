use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train/test node ids of one few-shot partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws a test set of `round(test_fraction · N)` nodes, then exactly
/// `shots` training nodes per class from the remainder.
pub fn few_shot_split(labels: &[usize], shots: usize, test_fraction: f64, seed: u64) -> Result<Split> {
    if shots == 0 {
        return Err(Error::invalid("shots per class must be at least 1"));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid("test_fraction must lie in [0, 1)"));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let n_test = (labels.len() as f64 * test_fraction).round() as usize;
    let mut test = order[..n_test].to_vec();
    test.sort_unstable();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for &i in &order[n_test..] {
        by_class[labels[i]].push(i);
    }
    let mut train = Vec::with_capacity(shots * num_classes);
    for (c, pool) in by_class.iter_mut().enumerate() {
        if pool.len() < shots {
            return Err(Error::invalid(format!(
                "class {c} has {} labeled nodes outside the test set, need {shots}",
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        train.extend_from_slice(&pool[..shots]);
    }
    train.sort_unstable();
    Ok(Split { train, test })
}
