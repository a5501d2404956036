//! The frozen masked-LM prediction layer: `softmax(W·h + b)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax_in_place, DenseMatrix};

/// Vocabulary projection `W: T×d` plus bias `b: T`. Never trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmHead {
    weight: DenseMatrix,
    bias: Vec<f64>,
}

impl LmHead {
    pub fn new(weight: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::validation(format!(
                "lm head has {} rows but {} bias entries",
                weight.rows(),
                bias.len()
            )));
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::validation("lm head contains non-finite values"));
        }
        Ok(Self { weight, bias })
    }

    pub fn vocab_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn weight(&self) -> &DenseMatrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.weight.mat_vec(h)?;
        out.iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        Ok(out)
    }

    pub fn predict(&self, h: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.logits(h)?;
        softmax_in_place(&mut out);
        Ok(out)
    }

    /// Unchecked `predict` into a caller-owned buffer of length `T`.
    pub(crate) fn predict_into(&self, h: &[f64], out: &mut [f64]) {
        for (t, o) in out.iter_mut().enumerate() {
            *o = crate::numerics::dot(self.weight.row(t), h) + self.bias[t];
        }
        softmax_in_place(out);
    }

    /// `Wᵀ·δ`, the gradient of a loss with respect to the hidden input given
    /// the gradient `δ` with respect to the logits.
    pub(crate) fn backprop_into(&self, dlogits: &[f64], out: &mut [f64]) {
        self.weight.vec_mat_into(dlogits, out);
    }

    /// FNV-1a over the bit patterns of `W` and `b`.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.weight.as_slice().iter().chain(&self.bias) {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{argmax, softmax};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_bias_only() {
        let head = LmHead::new(DenseMatrix::identity(3), vec![0.0; 3]).unwrap();
        assert_eq!(head.logits(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        let head = LmHead::new(DenseMatrix::identity(3), vec![0.1, -0.2, 0.3]).unwrap();
        assert_eq!(head.logits(&[0.0; 3]).unwrap(), vec![0.1, -0.2, 0.3]);
        assert!(head.logits(&[0.0; 2]).is_err());
        assert!(LmHead::new(DenseMatrix::identity(3), vec![0.0; 2]).is_err());
    }

    #[test]
    fn random_logits_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = DenseMatrix::xavier_uniform(4, 3, &mut rng);
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = [0.3, -1.2, 0.8];
        let head = LmHead::new(w.clone(), b.clone()).unwrap();
        let got = head.logits(&h).unwrap();
        for t in 0..4 {
            let mut acc = b[t];
            for k in 0..3 {
                acc += w.get(t, k) * h[k];
            }
            assert!((acc - got[t]).abs() < 1e-14);
        }
    }

    #[test]
    fn predict_examples() {
        let head = LmHead::new(DenseMatrix::zeros(5, 2), vec![0.0; 5]).unwrap();
        let p = head.predict(&[1.0, 2.0]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));

        let head = LmHead::new(DenseMatrix::identity(2), vec![0.0; 2]).unwrap();
        let h = [1f64.ln(), 3f64.ln()];
        assert_eq!(head.predict(&h).unwrap(), softmax(&h).unwrap());
    }

    #[test]
    fn argmax_agrees_with_logits_and_survives_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = DenseMatrix::xavier_uniform(12, 5, &mut rng);
        let head = LmHead::new(w, vec![0.0; 12]).unwrap();
        for _ in 0..1000 {
            let h: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let l = head.logits(&h).unwrap();
            let p = head.predict(&h).unwrap();
            assert_eq!(argmax(&l), argmax(&p));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let lambda: f64 = rng.random_range(0.01..1.0);
            let scaled: Vec<f64> = h.iter().map(|x| x * lambda).collect();
            assert_eq!(argmax(&head.predict(&scaled).unwrap()), argmax(&p));
        }
    }
}
