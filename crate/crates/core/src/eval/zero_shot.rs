use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::auc;
use crate::numerics::DenseMatrix;
use crate::tag::Bundle;

/// Candidate tokens whose summed probability argues for (positive) or
/// against (negative) a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabSet {
    pub label: String,
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
}

/// A token given by id or by its vocabulary string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TokenRef {
    Id(u32),
    Name(String),
}

/// Vocabulary set as written in JSON, before resolution against a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawVocabSet {
    pub label: String,
    pub positive: Vec<TokenRef>,
    #[serde(default)]
    pub negative: Vec<TokenRef>,
}

impl RawVocabSet {
    pub fn resolve(&self, bundle: &Bundle) -> Result<VocabSet> {
        let lookup = |refs: &[TokenRef]| -> Result<Vec<u32>> {
            refs.iter()
                .map(|r| match r {
                    TokenRef::Id(id) if (*id as usize) < bundle.vocab_size() => Ok(*id),
                    TokenRef::Id(id) => Err(Error::invalid(format!("token id {id} out of range"))),
                    TokenRef::Name(s) => bundle.resolve_token(s),
                })
                .collect()
        };
        let set = VocabSet {
            label: self.label.clone(),
            positive: lookup(&self.positive)?,
            negative: lookup(&self.negative)?,
        };
        Ok(set)
    }
}

impl VocabSet {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.positive.is_empty() {
            return Err(Error::invalid(format!(
                "vocab set {:?} has no positive tokens",
                self.label
            )));
        }
        if let Some(t) = self
            .positive
            .iter()
            .chain(&self.negative)
            .find(|&&t| t as usize >= vocab)
        {
            return Err(Error::invalid(format!("token {t} out of range for T = {vocab}")));
        }
        if self.positive.iter().any(|t| self.negative.contains(t)) {
            return Err(Error::invalid(format!("vocab set {:?} is not disjoint", self.label)));
        }
        Ok(())
    }
}

/// `Σ_{t∈pos} Y[i,t] − Σ_{t∈neg} Y[i,t]` for every node.
pub fn zero_shot_scores(y: &DenseMatrix, set: &VocabSet) -> Result<Vec<f64>> {
    set.validate(y.cols())?;
    Ok((0..y.rows())
        .map(|i| {
            let row = y.row(i);
            let pos: f64 = set.positive.iter().map(|&t| row[t as usize]).sum();
            let neg: f64 = set.negative.iter().map(|&t| row[t as usize]).sum();
            pos - neg
        })
        .collect())
}

/// Multi-class zero-shot: the class whose positive tokens carry the most mass.
pub fn zero_shot_predict(y: &DenseMatrix, sets: &[VocabSet]) -> Result<Vec<usize>> {
    if sets.is_empty() {
        return Err(Error::invalid("no vocab sets"));
    }
    for s in sets {
        s.validate(y.cols())?;
    }
    Ok((0..y.rows())
        .map(|i| {
            let row = y.row(i);
            let mass: Vec<f64> = sets
                .iter()
                .map(|s| s.positive.iter().map(|&t| row[t as usize]).sum())
                .collect();
            crate::numerics::argmax(&mass)
        })
        .collect())
}

/// Per-token AUC of each column of `Y` as a score for the binary labels,
/// sorted descending (lower id first on ties), truncated to `top_k`.
pub fn rank_tokens_by_auc(y: &DenseMatrix, labels: &[bool], top_k: usize) -> Result<Vec<(u32, f64)>> {
    if labels.len() != y.rows() {
        return Err(Error::invalid(format!("{} labels for {} rows", labels.len(), y.rows())));
    }
    let mut column = vec![0.0; y.rows()];
    let mut ranked = Vec::with_capacity(y.cols());
    for t in 0..y.cols() {
        for (r, c) in column.iter_mut().enumerate() {
            *c = y.get(r, t);
        }
        ranked.push((t as u32, auc(&column, labels)?));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    Ok(ranked)
}
