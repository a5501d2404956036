//! Seeded generator of synthetic text-attributed graphs with a planted topic
//! structure, and the enumerated Bayes-optimal predictor for them.
//!
//! Nodes carry a latent topic. Edges follow a stochastic block model, a
//! node's sentence embedding is a noisy topic code, and each masked token is a
//! uniformly chosen token of the node's topic whose cached hidden state only
//! carries a `λ` fraction of the topic signal. Neighbors therefore hold
//! information the context alone lacks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm_head::LmHead;
use crate::numerics::{dot, DenseMatrix};
use crate::tag::{Bundle, Graph, MaskedTokenRecord, PromptRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub topics: usize,
    pub vocab: usize,
    pub tokens_per_topic: usize,
    pub common_tokens: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Share of the topic signal in a masked token's context hidden state.
    pub lambda: f64,
    /// Topic-signal strength of the sentence embeddings.
    pub rho: f64,
    pub sigma_z: f64,
    pub sigma_h: f64,
    pub masks_per_node: usize,
    /// Prompt records per node (prompt ids `0..prompts_per_node`).
    pub prompts_per_node: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// LM head rows are `head_scale · e(t)`.
    pub head_scale: f64,
    /// Context hidden states are `hidden_scale · (λ μ_c + (1 − λ) μ̄) + noise`.
    pub hidden_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_nodes: 500,
            topics: 4,
            vocab: 100,
            tokens_per_topic: 20,
            common_tokens: 20,
            p_in: 0.05,
            p_out: 0.002,
            lambda: 0.2,
            rho: 0.7,
            sigma_z: 1.0,
            sigma_h: 0.3,
            masks_per_node: 3,
            prompts_per_node: 1,
            hidden_dim: 64,
            embed_dim: 16,
            head_scale: 5.0,
            hidden_scale: 4.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics * self.tokens_per_topic + self.common_tokens != self.vocab {
            return Err(Error::invalid(
                "topics * tokens_per_topic + common_tokens must equal vocab",
            ));
        }
        if self.num_nodes == 0 || self.topics == 0 || self.tokens_per_topic == 0 {
            return Err(Error::invalid(
                "num_nodes, topics and tokens_per_topic must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid("lambda must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return Err(Error::invalid("edge probabilities must lie in [0, 1]"));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("hidden_dim and embed_dim must be positive"));
        }
        if self.topics > self.embed_dim {
            return Err(Error::invalid("need embed_dim >= topics for orthonormal topic codes"));
        }
        if self.sigma_z < 0.0 || self.sigma_h < 0.0 || self.rho < 0.0 {
            return Err(Error::invalid("noise scales and rho must be non-negative"));
        }
        Ok(())
    }

    /// Topic of a vocabulary id, `None` for common tokens.
    pub fn token_topic(&self, token: usize) -> Option<usize> {
        let t = token / self.tokens_per_topic;
        (t < self.topics).then_some(t)
    }

    pub fn topic_tokens(&self, topic: usize) -> std::ops::Range<usize> {
        topic * self.tokens_per_topic..(topic + 1) * self.tokens_per_topic
    }

    fn edge_prob(&self, a: usize, b: usize) -> f64 {
        if a == b {
            self.p_in
        } else {
            self.p_out
        }
    }
}

/// Latent variables behind a generated bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub topics: Vec<usize>,
    /// Unit-norm token embeddings `e(t)`, `T × d`.
    pub token_embeddings: DenseMatrix,
    /// Mean embedding of each topic's tokens, `C × d`.
    pub topic_means: DenseMatrix,
    /// Orthonormal topic codes, `C × d_z`.
    pub topic_codes: DenseMatrix,
}

/// What gets written next to a synthetic bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub config: SynthConfig,
    pub topics: Vec<usize>,
}

impl SynthTruth {
    pub fn sidecar(&self) -> TruthSidecar {
        TruthSidecar {
            config: self.config.clone(),
            topics: self.topics.clone(),
        }
    }

    /// Mean of the context hidden state for a node of topic `c`.
    pub fn hidden_mean(&self, topic: usize) -> Vec<f64> {
        let cfg = &self.config;
        let c_count = cfg.topics as f64;
        (0..cfg.hidden_dim)
            .map(|k| {
                let grand = (0..cfg.topics).map(|c| self.topic_means.get(c, k)).sum::<f64>() / c_count;
                cfg.hidden_scale * (cfg.lambda * self.topic_means.get(topic, k) + (1.0 - cfg.lambda) * grand)
            })
            .collect()
    }
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            scale * x
        })
        .collect()
}

fn unit_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, n, 1.0);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn orthonormal_rows<R: Rng + ?Sized>(rng: &mut R, count: usize, dim: usize) -> DenseMatrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    while rows.len() < count {
        let mut v = gaussian_vec(rng, dim, 1.0);
        for r in &rows {
            let p = dot(&v, r);
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    DenseMatrix::from_vec(count, dim, rows.concat()).unwrap()
}

fn f32_round(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

pub fn token_strings(cfg: &SynthConfig) -> Vec<String> {
    (0..cfg.vocab)
        .map(|t| match cfg.token_topic(t) {
            Some(c) => format!("topic{c}_w{}", t - c * cfg.tokens_per_topic),
            None => format!("common{}", t - cfg.topics * cfg.tokens_per_topic),
        })
        .collect()
}

/// Generates a bundle and its latent truth. All stored values are already
/// `f32`-representable, so the bundle survives a save/load unchanged.
pub fn generate(cfg: &SynthConfig) -> Result<(Bundle, SynthTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, d, d_z, c_count) = (cfg.num_nodes, cfg.hidden_dim, cfg.embed_dim, cfg.topics);

    let topics: Vec<usize> = (0..n).map(|_| rng.random_range(0..c_count)).collect();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(cfg.edge_prob(topics[i], topics[j])) {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges, true)?;

    let mut token_embeddings = DenseMatrix::zeros(cfg.vocab, d);
    for t in 0..cfg.vocab {
        token_embeddings.row_mut(t).copy_from_slice(&unit_vec(&mut rng, d));
    }
    let mut topic_means = DenseMatrix::zeros(c_count, d);
    for c in 0..c_count {
        let inv = 1.0 / cfg.tokens_per_topic as f64;
        for t in cfg.topic_tokens(c) {
            crate::numerics::axpy(inv, token_embeddings.row(t), topic_means.row_mut(c));
        }
    }
    let topic_codes = orthonormal_rows(&mut rng, c_count, d_z);

    let mut weight = token_embeddings.clone();
    weight.as_mut_slice().iter_mut().for_each(|x| *x *= cfg.head_scale);
    weight.round_to_f32();
    let head = LmHead::new(weight, vec![0.0; cfg.vocab])?;

    let truth = SynthTruth {
        config: cfg.clone(),
        topics,
        token_embeddings,
        topic_means,
        topic_codes,
    };

    let mut embeddings = DenseMatrix::zeros(n, d_z);
    for i in 0..n {
        let noise = gaussian_vec(&mut rng, d_z, cfg.sigma_z);
        let code = truth.topic_codes.row(truth.topics[i]);
        let row = embeddings.row_mut(i);
        for k in 0..d_z {
            row[k] = cfg.rho * code[k] + noise[k];
        }
        f32_round(row);
    }

    let means: Vec<Vec<f64>> = (0..c_count).map(|c| truth.hidden_mean(c)).collect();
    let sample_hidden = |rng: &mut ChaCha8Rng, topic: usize| {
        let mut h = gaussian_vec(rng, d, cfg.sigma_h);
        h.iter_mut().zip(&means[topic]).for_each(|(x, m)| *x += m);
        f32_round(&mut h);
        h
    };

    let mut masked = Vec::with_capacity(n * cfg.masks_per_node);
    let mut prompts = Vec::with_capacity(n * cfg.prompts_per_node);
    for i in 0..n {
        let c = truth.topics[i];
        for k in 0..cfg.masks_per_node {
            let token = c * cfg.tokens_per_topic + rng.random_range(0..cfg.tokens_per_topic);
            masked.push(MaskedTokenRecord {
                node: i,
                position: k as u32,
                token: token as u32,
                hidden: sample_hidden(&mut rng, c),
            });
        }
        for p in 0..cfg.prompts_per_node {
            prompts.push(PromptRecord {
                node: i,
                prompt_id: p as u32,
                hidden: sample_hidden(&mut rng, c),
            });
        }
    }

    let bundle = Bundle {
        graph,
        undirected: true,
        embeddings,
        head,
        masked,
        prompts,
        token_strings: Some(token_strings(cfg)),
    };
    bundle.validate()?;
    Ok((bundle, truth))
}

/// Log-likelihood of `x` under an isotropic Gaussian; a zero scale is
/// treated as a very narrow one.
fn gaussian_loglik(x: &[f64], mean: &[f64], sigma: f64) -> f64 {
    let s = sigma.max(1e-6);
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum();
    -sq / (2.0 * s * s)
}

fn bernoulli_loglik(p: f64, hit: bool) -> f64 {
    match (hit, p) {
        (true, p) => p.ln(),
        (false, p) if p >= 1.0 => f64::NEG_INFINITY,
        (false, p) => (1.0 - p).ln(),
    }
}

/// Posterior over the topic of `record.node` given its context hidden state,
/// its sentence embedding and the full block-model likelihood of the
/// observed adjacency under the true topics of every other node.
pub fn topic_posterior(truth: &SynthTruth, bundle: &Bundle, record: &MaskedTokenRecord) -> Vec<f64> {
    let cfg = &truth.config;
    let i = record.node;
    let z_i = bundle.embedding(i);
    let neighbors = bundle.graph.row(i);

    // topic counts among neighbors and among all other nodes
    let mut nbr_counts = vec![0usize; cfg.topics];
    for &j in neighbors {
        if j != i {
            nbr_counts[truth.topics[j]] += 1;
        }
    }
    let mut all_counts = vec![0usize; cfg.topics];
    for (j, &c) in truth.topics.iter().enumerate() {
        if j != i {
            all_counts[c] += 1;
        }
    }

    let mut log_post: Vec<f64> = (0..cfg.topics)
        .map(|c| {
            let code: Vec<f64> = truth.topic_codes.row(c).iter().map(|x| cfg.rho * x).collect();
            let mut lp = gaussian_loglik(&record.hidden, &truth.hidden_mean(c), cfg.sigma_h)
                + gaussian_loglik(z_i, &code, cfg.sigma_z);
            for other in 0..cfg.topics {
                let p = cfg.edge_prob(c, other);
                let hits = nbr_counts[other];
                let misses = all_counts[other] - hits;
                if hits > 0 {
                    lp += hits as f64 * bernoulli_loglik(p, true);
                }
                if misses > 0 {
                    lp += misses as f64 * bernoulli_loglik(p, false);
                }
            }
            lp
        })
        .collect();
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![1.0 / cfg.topics as f64; cfg.topics];
    }
    log_post.iter_mut().for_each(|x| *x = (*x - max).exp());
    let sum: f64 = log_post.iter().sum();
    log_post.iter_mut().for_each(|x| *x /= sum);
    log_post
}

/// Bayes-optimal token distribution for a masked record: the topic posterior
/// spread uniformly over each topic's tokens.
pub fn bayes_oracle(truth: &SynthTruth, bundle: &Bundle, record: &MaskedTokenRecord) -> Vec<f64> {
    let cfg = &truth.config;
    let post = topic_posterior(truth, bundle, record);
    let mut out = vec![0.0; cfg.vocab];
    for (c, p) in post.iter().enumerate() {
        for t in cfg.topic_tokens(c) {
            out[t] = p / cfg.tokens_per_topic as f64;
        }
    }
    out
}

/// Whether a predicted token belongs to the topic of the true token.
pub fn topic_hit(cfg: &SynthConfig, predicted: usize, truth: usize) -> bool {
    matches!((cfg.token_topic(predicted), cfg.token_topic(truth)), (Some(a), Some(b)) if a == b)
}

/// Topic carrying the most probability mass in a token distribution.
pub fn dominant_topic(cfg: &SynthConfig, dist: &[f64]) -> usize {
    let mass: Vec<f64> = (0..cfg.topics)
        .map(|c| cfg.topic_tokens(c).map(|t| dist[t]).sum())
        .collect();
    crate::numerics::argmax(&mass)
}

/// Deterministic shuffle of record indices into (train, held-out).
pub fn split_records(count: usize, holdout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((count as f64) * holdout_fraction).round() as usize;
    let held_out = idx.split_off(count - held.min(count));
    let mut train = idx;
    train.sort_unstable();
    let mut held_out = held_out;
    held_out.sort_unstable();
    (train, held_out)
}

/// Fraction of records whose top-1 predicted token lies in the topic of the
/// true token.
pub fn topic_accuracy<F>(cfg: &SynthConfig, records: &[&MaskedTokenRecord], mut predict: F) -> Result<f64>
where
    F: FnMut(&MaskedTokenRecord) -> Result<Vec<f64>>,
{
    if records.is_empty() {
        return Err(Error::invalid("no records to score"));
    }
    let mut hits = 0usize;
    for r in records {
        let p = predict(r)?;
        if topic_hit(cfg, crate::numerics::argmax(&p), r.token as usize) {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

/// Holds out a fraction of nodes: the returned bundle keeps only masked
/// records of the remaining nodes, the indices name every masked record of a
/// held-out node in the original bundle.
pub fn hold_out_nodes(bundle: &Bundle, holdout_fraction: f64, seed: u64) -> (Bundle, Vec<usize>) {
    let (_, held_nodes) = split_records(bundle.num_nodes(), holdout_fraction, seed);
    let mut held = vec![false; bundle.num_nodes()];
    held_nodes.iter().for_each(|&i| held[i] = true);
    let (out, keep): (Vec<usize>, Vec<usize>) = (0..bundle.masked.len()).partition(|&r| held[bundle.masked[r].node]);
    let masked = keep.iter().map(|&r| bundle.masked[r].clone()).collect();
    (
        Bundle {
            masked,
            ..bundle.clone()
        },
        out,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tag::{read_bundle, write_bundle};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            num_nodes: 200,
            seed,
            ..SynthConfig::default()
        }
    }

    fn bytes(b: &Bundle) -> Vec<u8> {
        let mut out = Vec::new();
        write_bundle(b, &mut out).unwrap();
        out
    }

    fn all_records(b: &Bundle) -> Vec<&MaskedTokenRecord> {
        b.masked.iter().collect()
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, ta) = generate(&small(3)).unwrap();
        let (b, tb) = generate(&small(3)).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        assert_eq!(ta, tb);
        let (c, _) = generate(&small(4)).unwrap();
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn bundle_round_trips_exactly() {
        let (b, _) = generate(&small(5)).unwrap();
        assert_eq!(read_bundle(&bytes(&b)).unwrap(), b);
    }

    #[test]
    fn default_bundle_shape_and_degree() {
        let cfg = SynthConfig::default();
        let (b, truth) = generate(&cfg).unwrap();
        b.validate().unwrap();
        assert_eq!(b.vocab_size(), 100);
        assert_eq!(b.masked.len(), 1500);
        assert_eq!(b.prompts.len(), 500);
        assert!(truth.topics.iter().all(|&c| c < cfg.topics));

        let n = cfg.num_nodes as f64;
        let c = cfg.topics as f64;
        let expected = n * (cfg.p_in / c + cfg.p_out * (c - 1.0) / c);
        let edges = b.graph.num_edges() as f64 / 2.0;
        let mean_degree = 2.0 * edges / n;
        let sigma = 2.0 * edges.sqrt() / n;
        assert!(
            (mean_degree - expected).abs() <= 3.0 * sigma,
            "mean degree {mean_degree} vs {expected} ± {sigma}"
        );
    }

    #[test]
    fn topic_codes_are_orthonormal() {
        let (_, truth) = generate(&small(6)).unwrap();
        let u = &truth.topic_codes;
        for a in 0..u.rows() {
            for b in 0..u.rows() {
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((dot(u.row(a), u.row(b)) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_tokens_belong_to_node_topic() {
        let cfg = small(7);
        let (b, truth) = generate(&cfg).unwrap();
        for r in &b.masked {
            assert_eq!(cfg.token_topic(r.token as usize), Some(truth.topics[r.node]));
        }
    }

    #[test]
    fn full_context_identifies_topic() {
        let cfg = SynthConfig {
            lambda: 1.0,
            sigma_h: 0.0,
            ..small(8)
        };
        let (b, truth) = generate(&cfg).unwrap();
        let recs = all_records(&b);
        let ctx = topic_accuracy(&cfg, &recs, |r| b.head.predict(&r.hidden)).unwrap();
        assert!(ctx >= 0.95, "context accuracy {ctx}");
        for r in &recs {
            let post = topic_posterior(&truth, &b, r);
            assert!(post[truth.topics[r.node]] > 0.999);
        }
    }

    #[test]
    fn empty_context_is_at_most_chance() {
        let cfg = SynthConfig {
            lambda: 0.0,
            ..SynthConfig::default()
        };
        let (b, _) = generate(&cfg).unwrap();
        let ctx = topic_accuracy(&cfg, &all_records(&b), |r| b.head.predict(&r.hidden)).unwrap();
        assert!(ctx <= 1.0 / cfg.topics as f64 + 0.05, "context accuracy {ctx}");
    }

    #[test]
    fn oracle_never_loses_to_context() {
        for seed in 0..4 {
            let cfg = small(seed);
            let (b, truth) = generate(&cfg).unwrap();
            let recs = all_records(&b);
            let ctx = topic_accuracy(&cfg, &recs, |r| b.head.predict(&r.hidden)).unwrap();
            let oracle = topic_accuracy(&cfg, &recs, |r| Ok(bayes_oracle(&truth, &b, r))).unwrap();
            assert!(oracle >= ctx, "seed {seed}: oracle {oracle} < context {ctx}");
        }
    }

    #[test]
    fn oracle_follows_neighbors_without_other_evidence() {
        let cfg = SynthConfig {
            lambda: 0.0,
            rho: 0.0,
            p_in: 0.2,
            p_out: 0.0,
            ..small(9)
        };
        let (b, truth) = generate(&cfg).unwrap();
        for r in b.masked.iter().filter(|r| b.graph.degree(r.node).unwrap() >= 3) {
            let dist = bayes_oracle(&truth, &b, r);
            let c = truth.topics[r.node];
            assert!(cfg.topic_tokens(c).map(|t| dist[t]).sum::<f64>() > 0.99);
            let first = dist[cfg.topic_tokens(c).start];
            assert!(cfg.topic_tokens(c).all(|t| (dist[t] - first).abs() < 1e-15));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            SynthConfig {
                vocab: 99,
                ..SynthConfig::default()
            },
            SynthConfig {
                lambda: 1.5,
                ..SynthConfig::default()
            },
            SynthConfig {
                p_in: -0.1,
                ..SynthConfig::default()
            },
            SynthConfig {
                embed_dim: 2,
                ..SynthConfig::default()
            },
            SynthConfig {
                num_nodes: 0,
                ..SynthConfig::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(generate(&cfg), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn token_string_scheme() {
        let s = token_strings(&SynthConfig::default());
        assert_eq!(s[0], "topic0_w0");
        assert_eq!(s[21], "topic1_w1");
        assert_eq!(s[80], "common0");
        assert_eq!(s[99], "common19");
    }

    #[test]
    fn node_holdout_is_disjoint() {
        let (b, _) = generate(&small(10)).unwrap();
        let (train, held) = hold_out_nodes(&b, 0.2, 1);
        assert_eq!(train.masked.len() + held.len(), b.masked.len());
        let held_nodes: std::collections::HashSet<usize> = held.iter().map(|&r| b.masked[r].node).collect();
        assert_eq!(held_nodes.len(), 40);
        assert!(train.masked.iter().all(|r| !held_nodes.contains(&r.node)));
    }

    #[test]
    fn split_is_a_partition() {
        let (mut a, b) = split_records(50, 0.3, 2);
        assert_eq!(b.len(), 15);
        a.extend(&b);
        a.sort_unstable();
        assert_eq!(a, (0..50).collect::<Vec<_>>());
        assert_eq!(split_records(50, 0.3, 2), split_records(50, 0.3, 2));
    }
}
