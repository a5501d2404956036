use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::adapter::{Ablation, AdapterConfig, AdapterParams};
use crate::error::{Error, Result};
use crate::lm_head::LmHead;
use crate::numerics::{axpy, dot, relu, sigmoid, DenseMatrix, LOG_FLOOR};
use crate::tag::MaskedTokenRecord;

/// How per-edge distributions are combined into a node distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Arithmetic,
    /// Elementwise geometric mean, renormalized. Diagnostics only.
    Geometric,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arithmetic" => Ok(Self::Arithmetic),
            "geometric" => Ok(Self::Geometric),
            other => Err(Error::invalid(format!("unknown pooling {other:?}"))),
        }
    }
}

/// A configured graph adapter: parameters plus the ablation in force.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphAdapter {
    pub config: AdapterConfig,
    pub params: AdapterParams,
}

/// Intermediate activations of one influence-MLP evaluation.
/// `acts[0]` is the input, `acts[l]` the output of layer `l`.
pub(crate) struct MlpTrace {
    acts: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub(crate) fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

impl GraphAdapter {
    pub fn new(config: AdapterConfig, params: AdapterParams) -> Result<Self> {
        config.validate()?;
        if params.gate_dim() != config.d_a || params.w_k.shape() != params.w_q.shape() {
            return Err(Error::invalid("gate projection shapes disagree with config"));
        }
        if params.mlp.len() != config.mlp_depth {
            return Err(Error::invalid(format!(
                "{} MLP layers but mlp_depth = {}",
                params.mlp.len(),
                config.mlp_depth
            )));
        }
        let mut prev = params.embed_dim();
        for l in &params.mlp {
            if l.input_dim() != prev || l.bias.len() != l.output_dim() {
                return Err(Error::invalid("MLP layer dimensions do not chain"));
            }
            prev = l.output_dim();
        }
        Ok(Self { config, params })
    }

    pub fn ablation(&self) -> Ablation {
        self.config.ablation
    }

    fn gate_active(&self) -> bool {
        self.config.ablation != Ablation::NoGate
    }

    fn check_embedding(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.params.embed_dim() {
            return Err(Error::invalid(format!(
                "sentence embedding has length {}, adapter expects {}",
                z.len(),
                self.params.embed_dim()
            )));
        }
        Ok(())
    }

    fn check_hidden(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.params.hidden_dim() {
            return Err(Error::invalid(format!(
                "hidden state has length {}, adapter expects {}",
                h.len(),
                self.params.hidden_dim()
            )));
        }
        Ok(())
    }

    /// `sigmoid((z_i·W_q)·(z_j·W_k))`, or 0.5 when the gate is ablated.
    pub fn gate(&self, z_i: &[f64], z_j: &[f64]) -> Result<f64> {
        self.check_embedding(z_i)?;
        self.check_embedding(z_j)?;
        if !self.gate_active() {
            return Ok(0.5);
        }
        let q = self.params.w_q.vec_mat(z_i)?;
        let k = self.params.w_k.vec_mat(z_j)?;
        Ok(sigmoid(dot(&q, &k)))
    }

    /// Influence vector `g(z_j)` in hidden-state space.
    pub fn influence(&self, z_j: &[f64]) -> Result<Vec<f64>> {
        self.check_embedding(z_j)?;
        Ok(self.mlp_forward(z_j).acts.pop().unwrap())
    }

    pub(crate) fn mlp_forward(&self, z: &[f64]) -> MlpTrace {
        let mut acts = Vec::with_capacity(self.params.mlp.len() + 1);
        acts.push(z.to_vec());
        let last = self.params.mlp.len() - 1;
        for (l, layer) in self.params.mlp.iter().enumerate() {
            let mut out = vec![0.0; layer.output_dim()];
            layer.weight.vec_mat_into(&acts[l], &mut out);
            out.iter_mut().zip(&layer.bias).for_each(|(o, b)| *o += b);
            if l != last {
                out.iter_mut().for_each(|o| *o = relu(*o));
            }
            acts.push(out);
        }
        MlpTrace { acts }
    }

    /// Accumulates parameter gradients of the MLP given `d out`.
    pub(crate) fn mlp_backward(&self, trace: &MlpTrace, dout: &[f64], grads: &mut AdapterParams) {
        let mut delta = dout.to_vec();
        for l in (0..self.params.mlp.len()).rev() {
            let g = &mut grads.mlp[l];
            g.weight.add_outer(1.0, &trace.acts[l], &delta);
            g.bias.iter_mut().zip(&delta).for_each(|(b, d)| *b += d);
            if l == 0 {
                break;
            }
            let mut prev = self.params.mlp[l].weight.mat_vec(&delta).unwrap();
            prev.iter_mut().zip(&trace.acts[l]).for_each(|(p, &a)| {
                if a <= 0.0 {
                    *p = 0.0
                }
            });
            delta = prev;
        }
    }

    /// `a·ĥ + (1 − a)·g(z_j)`.
    pub fn fuse(&self, hidden: &[f64], z_i: &[f64], z_j: &[f64]) -> Result<Vec<f64>> {
        self.check_hidden(hidden)?;
        let a = self.gate(z_i, z_j)?;
        let g = self.influence(z_j)?;
        Ok(convex(a, hidden, &g))
    }

    /// Distribution predicted through one edge: `f_LM(fuse(ĥ, z_i, z_j))`.
    pub fn edge_predict(&self, head: &LmHead, hidden: &[f64], z_i: &[f64], z_j: &[f64]) -> Result<Vec<f64>> {
        if head.hidden_dim() != self.params.hidden_dim() {
            return Err(Error::invalid("lm head and adapter hidden sizes differ"));
        }
        head.predict(&self.fuse(hidden, z_i, z_j)?)
    }

    /// Pools edge predictions of node `i` over `neighbor_ids`. Under the
    /// `no_graph` ablation the neighborhood is `{i}` whatever is passed.
    pub fn node_predict(
        &self,
        head: &LmHead,
        embeddings: &DenseMatrix,
        hidden: &[f64],
        i: usize,
        neighbor_ids: &[usize],
        pooling: Pooling,
    ) -> Result<Vec<f64>> {
        let own = [i];
        let neighbors = if self.ablation() == Ablation::NoGraph {
            &own[..]
        } else {
            neighbor_ids
        };
        if neighbors.is_empty() {
            return Err(Error::EmptyNeighborhood(i));
        }
        if i >= embeddings.rows() || neighbors.iter().any(|&j| j >= embeddings.rows()) {
            return Err(Error::invalid("node id out of range for embeddings"));
        }
        let z_i = embeddings.row(i);
        let dists = neighbors
            .iter()
            .map(|&j| self.edge_predict(head, hidden, z_i, embeddings.row(j)))
            .collect::<Result<Vec<_>>>()?;
        pool(&dists, pooling)
    }

    /// Mean over `neighbors` of the per-edge cross-entropy of the true token,
    /// i.e. minus the log geometric mean of the true-class edge probabilities.
    pub fn loss_geometric(
        &self,
        head: &LmHead,
        embeddings: &DenseMatrix,
        record: &MaskedTokenRecord,
        neighbors: &[usize],
    ) -> Result<f64> {
        if neighbors.is_empty() {
            return Err(Error::EmptyNeighborhood(record.node));
        }
        let z_i = embeddings.row(record.node);
        let mut total = 0.0;
        for &j in neighbors {
            let p = self.edge_predict(head, &record.hidden, z_i, embeddings.row(j))?;
            total += crate::numerics::cross_entropy(&p, record.token as usize)?;
        }
        Ok(total / neighbors.len() as f64)
    }

    /// Mean per-pair loss over `pairs = (record index, neighbor)` and its
    /// gradient with respect to the adapter parameters only.
    pub fn loss_and_grads(
        &self,
        head: &LmHead,
        embeddings: &DenseMatrix,
        records: &[MaskedTokenRecord],
        pairs: &[(usize, usize)],
    ) -> Result<(f64, AdapterParams)> {
        self.loss_and_grads_threaded(head, embeddings, records, pairs, 1)
    }

    pub(crate) fn loss_and_grads_threaded(
        &self,
        head: &LmHead,
        embeddings: &DenseMatrix,
        records: &[MaskedTokenRecord],
        pairs: &[(usize, usize)],
        threads: usize,
    ) -> Result<(f64, AdapterParams)> {
        if pairs.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        if head.hidden_dim() != self.params.hidden_dim() || embeddings.cols() != self.params.embed_dim() {
            return Err(Error::invalid("bundle dimensions differ from adapter dimensions"));
        }
        for &(r, j) in pairs {
            let rec = records
                .get(r)
                .ok_or_else(|| Error::invalid(format!("record index {r} out of range")))?;
            if rec.node >= embeddings.rows() || j >= embeddings.rows() {
                return Err(Error::invalid("pair references a node outside the embeddings"));
            }
            if rec.token as usize >= head.vocab_size() || rec.hidden.len() != head.hidden_dim() {
                return Err(Error::invalid(format!("record {r} does not match the lm head")));
            }
        }

        let chunks: Vec<&[(usize, usize)]> = pairs.chunks(PAIR_CHUNK).collect();
        let eval = |chunk: &[(usize, usize)]| self.chunk_grads(head, embeddings, records, chunk);
        let partials = crate::parallel::ordered_map(&chunks, threads, |c| eval(c));

        let mut loss = 0.0;
        let mut grads = self.params.zeros_like();
        for (l, g) in partials {
            loss += l;
            grads.add_assign(&g);
        }
        let inv = 1.0 / pairs.len() as f64;
        grads.scale(inv);
        Ok((loss * inv, grads))
    }

    /// Summed (not averaged) loss and gradient over one chunk of pairs.
    fn chunk_grads(
        &self,
        head: &LmHead,
        embeddings: &DenseMatrix,
        records: &[MaskedTokenRecord],
        pairs: &[(usize, usize)],
    ) -> (f64, AdapterParams) {
        let gate = self.gate_active();
        let d = head.hidden_dim();
        let t = head.vocab_size();

        // per-node caches, in first-seen order
        let mut q_slot = HashMap::new();
        let mut k_slot = HashMap::new();
        let mut q_nodes = Vec::new();
        let mut q = Vec::new();
        let mut k_nodes = Vec::new();
        let mut k = Vec::new();
        let mut traces = Vec::new();
        for &(r, j) in pairs {
            let i = records[r].node;
            if gate {
                q_slot.entry(i).or_insert_with(|| {
                    q_nodes.push(i);
                    q.push(self.params.w_q.vec_mat(embeddings.row(i)).unwrap());
                    q.len() - 1
                });
            }
            k_slot.entry(j).or_insert_with(|| {
                let z_j = embeddings.row(j);
                k_nodes.push(j);
                k.push(if gate {
                    self.params.w_k.vec_mat(z_j).unwrap()
                } else {
                    Vec::new()
                });
                traces.push(self.mlp_forward(z_j));
                k_nodes.len() - 1
            });
        }
        let mut dq = vec![vec![0.0; self.config.d_a]; q.len()];
        let mut dk = vec![vec![0.0; if gate { self.config.d_a } else { 0 }]; k.len()];
        let mut dg = vec![vec![0.0; d]; k.len()];

        let mut loss = 0.0;
        let mut fused = vec![0.0; d];
        let mut probs = vec![0.0; t];
        let mut dh = vec![0.0; d];
        for &(r, j) in pairs {
            let rec = &records[r];
            let ks = k_slot[&j];
            let qs = if gate { q_slot[&rec.node] } else { 0 };
            let a = if gate { sigmoid(dot(&q[qs], &k[ks])) } else { 0.5 };
            let g = traces[ks].output();
            for ((f, &h), &gv) in fused.iter_mut().zip(&rec.hidden).zip(g) {
                *f = a * h + (1.0 - a) * gv;
            }
            head.predict_into(&fused, &mut probs);
            let y = rec.token as usize;
            let py = probs[y];
            loss -= py.max(LOG_FLOOR).ln();
            if py < LOG_FLOOR {
                // clamped: the loss is locally constant
                continue;
            }
            // d loss / d logits = p - onehot(y)
            probs[y] -= 1.0;
            head.backprop_into(&probs, &mut dh);

            let scale = 1.0 - a;
            dg[ks].iter_mut().zip(&dh).for_each(|(x, v)| *x += scale * v);

            if gate {
                let da: f64 = dh.iter().zip(&rec.hidden).zip(g).map(|((v, h), gv)| v * (h - gv)).sum();
                let ds = da * a * (1.0 - a);
                axpy(ds, &k[ks], &mut dq[qs]);
                axpy(ds, &q[qs], &mut dk[ks]);
            }
        }

        let mut grads = self.params.zeros_like();
        if gate {
            for (i, dqi) in q_nodes.iter().zip(&dq) {
                grads.w_q.add_outer(1.0, embeddings.row(*i), dqi);
            }
            for (j, dkj) in k_nodes.iter().zip(&dk) {
                grads.w_k.add_outer(1.0, embeddings.row(*j), dkj);
            }
        }
        for (trace, dgj) in traces.iter().zip(&dg) {
            self.mlp_backward(trace, dgj, &mut grads);
        }
        (loss, grads)
    }
}

/// Elementwise mean (arithmetic) or renormalized geometric mean of
/// equally long distributions.
pub fn pool(dists: &[Vec<f64>], pooling: Pooling) -> Result<Vec<f64>> {
    let first = dists.first().ok_or_else(|| Error::invalid("nothing to pool"))?;
    if dists.iter().any(|d| d.len() != first.len()) {
        return Err(Error::invalid("pooled distributions differ in length"));
    }
    let inv = 1.0 / dists.len() as f64;
    let mut acc = vec![0.0; first.len()];
    match pooling {
        Pooling::Arithmetic => {
            for d in dists {
                acc.iter_mut().zip(d).for_each(|(a, x)| *a += x);
            }
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        Pooling::Geometric => {
            for d in dists {
                acc.iter_mut()
                    .zip(d)
                    .for_each(|(a, x)| *a += x.max(f64::MIN_POSITIVE).ln());
            }
            acc.iter_mut().for_each(|a| *a = (*a * inv).exp());
            let sum: f64 = acc.iter().sum();
            acc.iter_mut().for_each(|a| *a /= sum);
        }
    }
    Ok(acc)
}

/// Pairs per independently evaluated gradient chunk. Fixed so that the
/// reduction order does not depend on the thread count.
const PAIR_CHUNK: usize = 256;

fn convex(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xv, yv)| a * xv + (1.0 - a) * yv).collect()
}
