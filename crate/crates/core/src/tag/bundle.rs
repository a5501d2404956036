use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm_head::LmHead;
use crate::numerics::DenseMatrix;
use crate::tag::Graph;

/// Hidden state of a masked position together with its true token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedTokenRecord {
    pub node: usize,
    pub position: u32,
    pub token: u32,
    pub hidden: Vec<f64>,
}

/// Hidden state of the mask slot of a prompt prepended to a node's text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub node: usize,
    pub prompt_id: u32,
    pub hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub graph: Graph,
    pub undirected: bool,
    /// Sentence embeddings, `N × d_z`.
    pub embeddings: DenseMatrix,
    pub head: LmHead,
    pub masked: Vec<MaskedTokenRecord>,
    pub prompts: Vec<PromptRecord>,
    pub token_strings: Option<Vec<String>>,
}

impl Bundle {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn vocab_size(&self) -> usize {
        self.head.vocab_size()
    }

    pub fn hidden_dim(&self) -> usize {
        self.head.hidden_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embedding(&self, node: usize) -> &[f64] {
        self.embeddings.row(node)
    }

    /// Checks every cross-field invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        let t = self.vocab_size();
        let d = self.hidden_dim();
        self.graph.validate(self.undirected)?;
        if self.embeddings.rows() != n {
            return Err(Error::validation(format!(
                "{} embedding rows for {n} nodes",
                self.embeddings.rows()
            )));
        }
        if self.embed_dim() == 0 {
            return Err(Error::validation("sentence embedding dimension is zero"));
        }
        if !self.embeddings.is_finite() {
            return Err(Error::validation("sentence embeddings contain non-finite values"));
        }
        if t == 0 || d == 0 {
            return Err(Error::validation("lm head has a zero dimension"));
        }
        if self.head.bias().len() != t {
            return Err(Error::validation("lm head bias length differs from vocabulary size"));
        }
        for (idx, r) in self.masked.iter().enumerate() {
            if r.node >= n {
                return Err(Error::validation(format!(
                    "masked record {idx}: node {} out of range",
                    r.node
                )));
            }
            if r.token as usize >= t {
                return Err(Error::validation(format!(
                    "masked record {idx}: token {} >= T={t}",
                    r.token
                )));
            }
            if r.hidden.len() != d || r.hidden.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("masked record {idx}: bad hidden state")));
            }
        }
        let mut seen = HashSet::new();
        for (idx, r) in self.prompts.iter().enumerate() {
            if r.node >= n {
                return Err(Error::validation(format!(
                    "prompt record {idx}: node {} out of range",
                    r.node
                )));
            }
            if r.hidden.len() != d || r.hidden.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("prompt record {idx}: bad hidden state")));
            }
            if !seen.insert((r.node, r.prompt_id)) {
                return Err(Error::validation(format!(
                    "duplicate prompt record for node {} prompt {}",
                    r.node, r.prompt_id
                )));
            }
        }
        if let Some(strings) = &self.token_strings {
            if strings.len() != t {
                return Err(Error::validation(format!("{} token strings for T={t}", strings.len())));
            }
        }
        Ok(())
    }

    /// Per-node index into `prompts` for one prompt id.
    pub fn prompt_index(&self, prompt_id: u32) -> Vec<Option<usize>> {
        let mut idx = vec![None; self.num_nodes()];
        for (k, r) in self.prompts.iter().enumerate() {
            if r.prompt_id == prompt_id {
                idx[r.node] = Some(k);
            }
        }
        idx
    }

    pub fn prompt_record(&self, node: usize, prompt_id: u32) -> Result<&PromptRecord> {
        self.prompts
            .iter()
            .find(|r| r.node == node && r.prompt_id == prompt_id)
            .ok_or_else(|| Error::NotFound(format!("prompt {prompt_id} for node {node}")))
    }

    /// Resolves a token given either as a string present in the vocabulary
    /// or as a decimal id.
    pub fn resolve_token(&self, token: &str) -> Result<u32> {
        if let Some(strings) = &self.token_strings {
            if let Some(pos) = strings.iter().position(|s| s == token) {
                return Ok(pos as u32);
            }
        }
        match token.parse::<u32>() {
            Ok(id) if (id as usize) < self.vocab_size() => Ok(id),
            _ => Err(Error::invalid(format!("unknown token {token:?}"))),
        }
    }

    pub fn token_label(&self, id: u32) -> String {
        self.token_strings
            .as_ref()
            .and_then(|s| s.get(id as usize).cloned())
            .unwrap_or_else(|| id.to_string())
    }

    pub fn token_lookup(&self) -> HashMap<&str, u32> {
        self.token_strings
            .iter()
            .flatten()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as u32))
            .collect()
    }

    /// Same bundle with the graph replaced by self-loops only.
    pub fn without_graph(&self) -> Bundle {
        Bundle {
            graph: Graph::self_loops_only(self.num_nodes()),
            ..self.clone()
        }
    }

    /// Same bundle with self-loops added (no-op when already present).
    pub fn with_self_loops(&self) -> Bundle {
        if self.graph.self_loops_added() {
            return self.clone();
        }
        Bundle {
            graph: self.graph.add_self_loops(),
            ..self.clone()
        }
    }
}
