use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterConfig;
use crate::numerics::DenseMatrix;

/// Affine layer `y = x·W + b` with `W: in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(input, output),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Trainable adapter parameters: gate projections and the influence MLP.
///
/// Also used as the gradient container, with identical shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub w_q: DenseMatrix,
    pub w_k: DenseMatrix,
    pub mlp: Vec<Linear>,
}

impl AdapterParams {
    /// Xavier-uniform gate projections and hidden layers; the MLP output
    /// layer starts at zero so the untrained influence is `g ≡ 0`.
    pub fn init<R: Rng + ?Sized>(cfg: &AdapterConfig, d_z: usize, d: usize, rng: &mut R) -> Self {
        let w_q = DenseMatrix::xavier_uniform(d_z, cfg.d_a, rng);
        let w_k = DenseMatrix::xavier_uniform(d_z, cfg.d_a, rng);
        let dims = layer_dims(cfg, d_z, d);
        let last = dims.len() - 2;
        let mlp = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                if l == last {
                    Linear::zeros(w[0], w[1])
                } else {
                    Linear {
                        weight: DenseMatrix::xavier_uniform(w[0], w[1], rng),
                        bias: vec![0.0; w[1]],
                    }
                }
            })
            .collect();
        Self { w_q, w_k, mlp }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_q: DenseMatrix::zeros(self.w_q.rows(), self.w_q.cols()),
            w_k: DenseMatrix::zeros(self.w_k.rows(), self.w_k.cols()),
            mlp: self
                .mlp
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn gate_dim(&self) -> usize {
        self.w_q.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.mlp.last().map_or(0, Linear::output_dim)
    }

    pub fn num_params(&self) -> usize {
        self.w_q.as_slice().len()
            + self.w_k.as_slice().len()
            + self
                .mlp
                .iter()
                .map(|l| l.weight.as_slice().len() + l.bias.len())
                .sum::<usize>()
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![self.w_q.as_slice(), self.w_k.as_slice()];
        for l in &self.mlp {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.w_q.as_mut_slice(), self.w_k.as_mut_slice()];
        for l in &mut self.mlp {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        out
    }

    /// All parameters in declaration order: `W_q`, `W_k`, then each MLP
    /// layer's weight followed by its bias.
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    /// Overwrites the parameters from a flat vector in [`Self::to_flat`] order.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length mismatch");
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= alpha);
        }
    }

    pub fn round_to_f32(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// `[d_z, H, …, H, d]` with `mlp_depth + 1` entries.
pub(crate) fn layer_dims(cfg: &AdapterConfig, d_z: usize, d: usize) -> Vec<usize> {
    let mut dims = vec![d_z];
    dims.extend(std::iter::repeat_n(cfg.mlp_hidden, cfg.mlp_depth - 1));
    dims.push(d);
    dims
}
