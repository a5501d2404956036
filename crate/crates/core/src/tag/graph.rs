use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adjacency in compressed sparse row form over dense node ids `0..N`.
///
/// Every row is sorted ascending and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    self_loops_added: bool,
}

impl Graph {
    /// Builds a graph from an edge list. Duplicate edges collapse; with
    /// `undirected` every edge is inserted in both directions.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)], undirected: bool) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            rows[u].push(v);
            if undirected && u != v {
                rows[v].push(u);
            }
        }
        Ok(Self::from_rows(rows, false))
    }

    /// N isolated nodes.
    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            offsets: vec![0; num_nodes + 1],
            targets: Vec::new(),
            self_loops_added: false,
        }
    }

    fn from_rows(mut rows: Vec<Vec<usize>>, self_loops_added: bool) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            targets.extend_from_slice(row);
            offsets.push(targets.len());
        }
        Self {
            num_nodes: rows.len(),
            offsets,
            targets,
            self_loops_added,
        }
    }

    /// Raw CSR constructor; checks structural invariants.
    pub fn from_csr(
        num_nodes: usize,
        offsets: Vec<usize>,
        targets: Vec<usize>,
        self_loops_added: bool,
    ) -> Result<Self> {
        let g = Self {
            num_nodes,
            offsets,
            targets,
            self_loops_added,
        };
        g.check_structure()?;
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn self_loops_added(&self) -> bool {
        self.self_loops_added
    }

    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        if i >= self.num_nodes {
            return Err(Error::invalid(format!(
                "node {i} out of range for {} nodes",
                self.num_nodes
            )));
        }
        Ok(self.row(i))
    }

    #[inline]
    pub(crate) fn row(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> Result<usize> {
        self.neighbors(i).map(<[usize]>::len)
    }

    /// Returns a copy where every row contains its own node exactly once.
    pub fn add_self_loops(&self) -> Graph {
        let rows = (0..self.num_nodes)
            .map(|i| {
                let mut row = self.row(i).to_vec();
                if let Err(pos) = row.binary_search(&i) {
                    row.insert(pos, i);
                }
                row
            })
            .collect();
        Self::from_rows(rows, true)
    }

    /// The graph with every non-self edge removed and self-loops added.
    pub fn self_loops_only(num_nodes: usize) -> Graph {
        Self::from_rows((0..num_nodes).map(|i| vec![i]).collect(), true)
    }

    /// Uniform sample without replacement of `min(k, degree)` neighbors of `i`.
    pub fn sample_neighbors<R: Rng + ?Sized>(&self, i: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        let row = self.neighbors(i)?;
        if row.is_empty() {
            return Err(Error::EmptyNeighborhood(i));
        }
        let amount = k.min(row.len());
        if amount == row.len() {
            return Ok(row.to_vec());
        }
        Ok(index::sample(rng, row.len(), amount)
            .into_iter()
            .map(|p| row[p])
            .collect())
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.num_nodes).all(|i| self.row(i).iter().all(|&j| self.row(j).binary_search(&i).is_ok()))
    }

    fn check_structure(&self) -> Result<()> {
        let n = self.num_nodes;
        if self.offsets.len() != n + 1 {
            return Err(Error::validation(format!(
                "csr offsets has length {}, expected {}",
                self.offsets.len(),
                n + 1
            )));
        }
        if self.offsets[0] != 0 || self.offsets[n] != self.targets.len() {
            return Err(Error::validation("csr offsets do not span the target array"));
        }
        if self.offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::validation("csr offsets are not nondecreasing"));
        }
        for i in 0..n {
            let row = self.row(i);
            if row.iter().any(|&j| j >= n) {
                return Err(Error::validation(format!("node {i} has an out-of-range neighbor")));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::validation(format!(
                    "neighbors of node {i} are not strictly ascending"
                )));
            }
            if self.self_loops_added && row.binary_search(&i).is_err() {
                return Err(Error::validation(format!(
                    "self-loop flag set but node {i} lacks a self-loop"
                )));
            }
        }
        Ok(())
    }

    /// Validates CSR invariants, and symmetry when `undirected`.
    pub fn validate(&self, undirected: bool) -> Result<()> {
        self.check_structure()?;
        if undirected && !self.is_symmetric() {
            return Err(Error::validation(
                "graph declared undirected but adjacency is asymmetric",
            ));
        }
        Ok(())
    }
}
