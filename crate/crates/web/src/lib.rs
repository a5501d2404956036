//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every method returns a JSON string so the page needs no generated
//! TypeScript types.

use gprompt::adapter::{effective_graph, train_with_log, Ablation, AdapterConfig, GraphAdapter, Pooling, TrainConfig};
use gprompt::eval::{auc, rank_tokens_by_auc, zero_shot_scores, VocabSet};
use gprompt::features::build_feature_matrix;
use gprompt::synthetic::{
    bayes_oracle, generate, hold_out_nodes, token_strings, topic_accuracy, SynthConfig, SynthTruth,
};
use gprompt::tag::Bundle;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[wasm_bindgen]
pub struct Demo {
    cfg: SynthConfig,
    bundle: Bundle,
    truth: SynthTruth,
    train_bundle: Bundle,
    held: Vec<usize>,
    adapters: Vec<(Ablation, GraphAdapter)>,
}

#[wasm_bindgen]
impl Demo {
    /// Generates a synthetic graph and holds out 20% of its nodes.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, num_nodes: usize, p_in: f64, p_out: f64, lambda: f64) -> Result<Demo, String> {
        let cfg = SynthConfig {
            num_nodes,
            p_in,
            p_out,
            lambda,
            seed: seed.into(),
            ..SynthConfig::default()
        };
        let (bundle, truth) = generate(&cfg).map_err(err)?;
        let (train_bundle, held) = hold_out_nodes(&bundle, 0.2, 1);
        Ok(Demo {
            cfg,
            bundle,
            truth,
            train_bundle,
            held,
            adapters: Vec::new(),
        })
    }

    /// Graph statistics and the two reference accuracies on held-out masks.
    pub fn summary(&self) -> Result<String, String> {
        let recs: Vec<_> = self.held.iter().map(|&r| &self.bundle.masked[r]).collect();
        let context = topic_accuracy(&self.cfg, &recs, |r| self.bundle.head.predict(&r.hidden)).map_err(err)?;
        let oracle =
            topic_accuracy(&self.cfg, &recs, |r| Ok(bayes_oracle(&self.truth, &self.bundle, r))).map_err(err)?;
        let edges = self.bundle.graph.num_edges() / 2;
        Ok(json!({
            "nodes": self.bundle.num_nodes(),
            "edges": edges,
            "mean_degree": 2.0 * edges as f64 / self.bundle.num_nodes() as f64,
            "topics": self.cfg.topics,
            "vocab": self.cfg.vocab,
            "train_records": self.train_bundle.masked.len(),
            "heldout_records": self.held.len(),
            "context_accuracy": context,
            "oracle_accuracy": oracle,
        })
        .to_string())
    }

    /// Trains one adapter variant and scores it on the held-out nodes' masks.
    pub fn train(&mut self, ablation: &str, epochs: usize) -> Result<String, String> {
        let ablation: Ablation = ablation.parse().map_err(err)?;
        let acfg = AdapterConfig {
            d_a: 32,
            mlp_hidden: 64,
            ablation,
            ..AdapterConfig::default()
        };
        let tcfg = TrainConfig {
            epochs,
            batch_pairs: 256,
            ..TrainConfig::default()
        };
        let mut losses = Vec::new();
        let (adapter, _) =
            train_with_log(&self.train_bundle, &acfg, &tcfg, |e| losses.push(e.mean_loss)).map_err(err)?;
        let graph = effective_graph(&self.bundle, &adapter.config);
        let recs: Vec<_> = self.held.iter().map(|&r| &self.bundle.masked[r]).collect();
        let b = &self.bundle;
        let accuracy = topic_accuracy(&self.cfg, &recs, |r| {
            adapter.node_predict(
                &b.head,
                &b.embeddings,
                &r.hidden,
                r.node,
                graph.neighbors(r.node)?,
                Pooling::Arithmetic,
            )
        })
        .map_err(err)?;
        self.adapters.retain(|(a, _)| *a != ablation);
        self.adapters.push((ablation, adapter));
        Ok(json!({"ablation": ablation.to_string(), "losses": losses, "heldout_accuracy": accuracy}).to_string())
    }

    /// Zero-shot AUC of a topic against the rest, scoring nodes by the summed
    /// probability of `tokens` (comma separated; empty means the topic's own
    /// words), plus the tokens that best separate the topic on their own.
    pub fn zero_shot(&self, ablation: &str, topic: usize, tokens: &str) -> Result<String, String> {
        let ablation: Ablation = ablation.parse().map_err(err)?;
        let adapter = self
            .adapters
            .iter()
            .find(|(a, _)| *a == ablation)
            .map(|(_, ad)| ad)
            .ok_or_else(|| format!("train the {ablation} adapter first"))?;
        if topic >= self.cfg.topics {
            return Err(format!("topic must be below {}", self.cfg.topics));
        }
        let positive = if tokens.trim().is_empty() {
            self.cfg.topic_tokens(topic).map(|t| t as u32).collect()
        } else {
            tokens
                .split(',')
                .map(|s| self.bundle.resolve_token(s.trim()))
                .collect::<gprompt::Result<Vec<_>>>()
                .map_err(err)?
        };
        let y = build_feature_matrix(adapter, &self.bundle, 0, 1).map_err(err)?;
        let labels: Vec<bool> = self.truth.topics.iter().map(|&t| t == topic).collect();
        let set = VocabSet {
            label: format!("topic{topic}"),
            positive,
            negative: Vec::new(),
        };
        let score = auc(&zero_shot_scores(&y, &set).map_err(err)?, &labels).map_err(err)?;
        let names = token_strings(&self.cfg);
        let top: Vec<_> = rank_tokens_by_auc(&y, &labels, 7)
            .map_err(err)?
            .into_iter()
            .map(|(t, a)| json!({"token": names[t as usize], "auc": a}))
            .collect();
        Ok(json!({"auc": score, "top_tokens": top}).to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(s: &str, key: &str) -> serde_json::Value {
        serde_json::from_str::<serde_json::Value>(s).unwrap()[key].clone()
    }

    #[test]
    fn demo_round_trip() {
        let mut demo = Demo::new(0, 200, 0.1, 0.005, 0.2).unwrap();
        let summary = demo.summary().unwrap();
        assert_eq!(field(&summary, "nodes"), 200);
        assert_eq!(field(&summary, "train_records"), 480);

        let trained = demo.train("full", 5).unwrap();
        assert_eq!(field(&trained, "losses").as_array().unwrap().len(), 5);
        let acc = field(&trained, "heldout_accuracy").as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));

        let zs = demo.zero_shot("full", 1, "").unwrap();
        assert!(field(&zs, "auc").as_f64().unwrap() > 0.5);
        assert_eq!(field(&zs, "top_tokens").as_array().unwrap().len(), 7);
        let custom = demo.zero_shot("full", 1, "topic1_w0, topic1_w2").unwrap();
        assert!(field(&custom, "auc").is_number());
    }

    #[test]
    fn bad_inputs_are_reported() {
        let mut demo = Demo::new(1, 60, 0.1, 0.01, 0.2).unwrap();
        assert!(demo.zero_shot("full", 0, "").unwrap_err().contains("train"));
        assert!(demo.train("no_graf", 1).is_err());
        demo.train("no_graph", 1).unwrap();
        assert!(demo.zero_shot("no_graph", 9, "").is_err());
        assert!(demo.zero_shot("no_graph", 0, "nonsense").is_err());
        assert!(Demo::new(0, 0, 0.1, 0.01, 0.2).is_err());
    }
}
