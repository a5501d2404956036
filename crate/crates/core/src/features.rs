//! Prompt-conditioned node features: decode each node's prompt hidden state
//! through the trained adapter over its full neighborhood, then keep a
//! subset of vocabulary columns.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::adapter::{effective_graph, GraphAdapter, Pooling};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::tag::format::{put_f32s, put_u32, put_u64, ByteReader};
use crate::tag::{Bundle, Graph, PromptRecord};

pub const FEATURE_MAGIC: &[u8; 4] = b"GPF1";

/// Number of columns kept by the std-dev filter unless configured otherwise.
pub const DEFAULT_TOP_M: usize = 512;

/// Selected vocabulary columns and the matching `N × M` sub-matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub tokens: Vec<u32>,
    pub values: DenseMatrix,
}

/// Mean over the node's neighborhood of the edge predictions for a prompt
/// hidden state.
pub fn infer_prompt_distribution(adapter: &GraphAdapter, bundle: &Bundle, record: &PromptRecord) -> Result<Vec<f64>> {
    let graph = effective_graph(bundle, &adapter.config);
    infer_with_graph(adapter, bundle, &graph, record)
}

fn infer_with_graph(adapter: &GraphAdapter, bundle: &Bundle, graph: &Graph, record: &PromptRecord) -> Result<Vec<f64>> {
    let neighbors = graph.neighbors(record.node)?;
    adapter.node_predict(
        &bundle.head,
        &bundle.embeddings,
        &record.hidden,
        record.node,
        neighbors,
        Pooling::Arithmetic,
    )
}

/// The `N × T` matrix whose row `i` is the pooled prompt distribution of node `i`.
pub fn build_feature_matrix(
    adapter: &GraphAdapter,
    bundle: &Bundle,
    prompt_id: u32,
    threads: usize,
) -> Result<DenseMatrix> {
    let index = bundle.prompt_index(prompt_id);
    let missing: Vec<usize> = index
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.is_none().then_some(i))
        .collect();
    if !missing.is_empty() {
        let shown: Vec<String> = missing.iter().take(20).map(usize::to_string).collect();
        return Err(Error::NotFound(format!(
            "prompt {prompt_id} missing for {} node(s): {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > 20 { ", ..." } else { "" }
        )));
    }
    let graph = effective_graph(bundle, &adapter.config);
    let rows: Vec<usize> = index.into_iter().map(Option::unwrap).collect();
    let dists = crate::parallel::ordered_map(&rows, threads, |&r| {
        infer_with_graph(adapter, bundle, &graph, &bundle.prompts[r])
    });
    let t = bundle.vocab_size();
    let mut out = DenseMatrix::zeros(bundle.num_nodes(), t);
    for (i, d) in dists.into_iter().enumerate() {
        out.row_mut(i).copy_from_slice(&d?);
    }
    Ok(out)
}

/// Population standard deviation of every column.
pub fn column_std(y: &DenseMatrix) -> Vec<f64> {
    let n = y.rows() as f64;
    let mut mean = vec![0.0; y.cols()];
    for r in 0..y.rows() {
        crate::numerics::axpy(1.0, y.row(r), &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; y.cols()];
    for r in 0..y.rows() {
        for ((v, x), m) in var.iter_mut().zip(y.row(r)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.into_iter().map(|v| (v / n).sqrt()).collect()
}

/// Keeps the `m` columns with the largest standard deviation, in descending
/// order of deviation; ties go to the lower vocabulary id.
pub fn filter_std(y: &DenseMatrix, m: usize) -> Result<NodeFeatures> {
    if m == 0 || m > y.cols() {
        return Err(Error::invalid(format!("M = {m} outside 1..={}", y.cols())));
    }
    let std = column_std(y);
    let mut order: Vec<usize> = (0..y.cols()).collect();
    order.sort_by(|&a, &b| std[b].total_cmp(&std[a]).then(a.cmp(&b)));
    order.truncate(m);
    let tokens: Vec<u32> = order.into_iter().map(|c| c as u32).collect();
    Ok(NodeFeatures {
        values: select_columns(y, &tokens),
        tokens,
    })
}

/// Keeps exactly the given columns, in the given order.
pub fn filter_vocab(y: &DenseMatrix, tokens: &[u32]) -> Result<NodeFeatures> {
    if tokens.is_empty() {
        return Err(Error::invalid("empty token selection"));
    }
    let mut seen = std::collections::HashSet::new();
    for &t in tokens {
        if t as usize >= y.cols() {
            return Err(Error::invalid(format!("token {t} out of range for T = {}", y.cols())));
        }
        if !seen.insert(t) {
            return Err(Error::invalid(format!("token {t} selected twice")));
        }
    }
    Ok(NodeFeatures {
        tokens: tokens.to_vec(),
        values: select_columns(y, tokens),
    })
}

fn select_columns(y: &DenseMatrix, tokens: &[u32]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(y.rows(), tokens.len());
    for r in 0..y.rows() {
        let src = y.row(r);
        for (dst, &t) in out.row_mut(r).iter_mut().zip(tokens) {
            *dst = src[t as usize];
        }
    }
    out
}

impl NodeFeatures {
    /// `"GPF1" | u64 N | u32 M | u32[M] token ids | f32[N*M]`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * (self.tokens.len() + self.values.as_slice().len()));
        out.extend_from_slice(FEATURE_MAGIC);
        put_u64(&mut out, self.values.rows() as u64).unwrap();
        put_u32(&mut out, self.tokens.len() as u32).unwrap();
        for &t in &self.tokens {
            put_u32(&mut out, t).unwrap();
        }
        put_f32s(&mut out, self.values.as_slice()).unwrap();
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != FEATURE_MAGIC {
            return Err(Error::Format("bad magic, expected GPF1".into()));
        }
        let n = usize::try_from(r.u64()?).map_err(|_| Error::Format("N overflows".into()))?;
        let m = r.u32()? as usize;
        let tokens = (0..m).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count = n.checked_mul(m).ok_or_else(|| Error::Format("N*M overflows".into()))?;
        let values = DenseMatrix::from_vec(n, m, r.f32s(count)?)?;
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes after feature matrix".into()));
        }
        Ok(Self { tokens, values })
    }

    /// CSV with a `node_id` column followed by one column per token.
    pub fn to_csv(&self, label: impl Fn(u32) -> String) -> String {
        let mut s = String::from("node_id");
        for &t in &self.tokens {
            s.push(',');
            s.push_str(&csv_field(&label(t)));
        }
        s.push('\n');
        for i in 0..self.values.rows() {
            s.push_str(&i.to_string());
            for v in self.values.row(i) {
                s.push(',');
                s.push_str(&(*v as f32).to_string());
            }
            s.push('\n');
        }
        s
    }

    pub fn save(
        &self,
        binary_path: impl AsRef<Path>,
        csv_path: impl AsRef<Path>,
        label: impl Fn(u32) -> String,
    ) -> Result<()> {
        fs::write(binary_path, self.to_bytes())?;
        let mut f = fs::File::create(csv_path)?;
        f.write_all(self.to_csv(label).as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
