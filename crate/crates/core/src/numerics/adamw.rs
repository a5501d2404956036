use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps over which the learning rate ramps linearly from `lr / warmup_steps` to `lr`.
    pub warmup_steps: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
        }
    }
}

/// Moment accumulators and hyperparameters of an AdamW run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub config: AdamWConfig,
}

impl OptimizerState {
    pub fn new(num_params: usize, config: AdamWConfig) -> Self {
        Self {
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            config,
        }
    }

    /// Learning rate applied by the next step.
    pub fn effective_lr(&self) -> f64 {
        let c = &self.config;
        if c.warmup_steps == 0 || self.step >= c.warmup_steps {
            c.lr
        } else {
            c.lr * (self.step + 1) as f64 / c.warmup_steps as f64
        }
    }
}

/// One decoupled-weight-decay Adam update. Returns the new parameters and state.
pub fn adamw_step(params: &[f64], grads: &[f64], state: &OptimizerState) -> Result<(Vec<f64>, OptimizerState)> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.m.len() != state.v.len() {
        return Err(Error::invalid(format!(
            "adamw: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let c = state.config;
    let lr = state.effective_lr();
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let decay = 1.0 - lr * c.weight_decay;

    let mut next = OptimizerState {
        step: state.step + 1,
        m: Vec::with_capacity(params.len()),
        v: Vec::with_capacity(params.len()),
        config: c,
    };
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let g = grads[i];
        let m = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        let v = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        let update = (m / bc1) / ((v / bc2).sqrt() + c.eps);
        out.push(params[i] * decay - lr * update);
        next.m.push(m);
        next.v.push(v);
    }
    Ok((out, next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64, warmup: u64) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay: wd,
            warmup_steps: warmup,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn zero_grad_applies_only_decay() {
        let p = vec![1.0, -2.0, 0.5];
        let state = OptimizerState::new(3, cfg(0.1, 0.01, 0));
        let (q, next) = adamw_step(&p, &[0.0; 3], &state).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((b - a * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
        }
        assert_eq!(next.step, 1);
    }

    #[test]
    fn zero_grad_zero_decay_is_bit_identical() {
        let p = vec![0.123_456_789, -7.0, 1e-300, 3.5];
        let state = OptimizerState::new(4, cfg(0.5, 0.0, 0));
        let (q, _) = adamw_step(&p, &[0.0; 4], &state).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn warmup_schedule() {
        let mut state = OptimizerState::new(1, cfg(1.0, 0.0, 10));
        assert!((state.effective_lr() - 0.1).abs() < 1e-15);
        state.step = 4;
        assert!((state.effective_lr() - 0.5).abs() < 1e-15);
        state.step = 10;
        assert_eq!(state.effective_lr(), 1.0);
        state.step = 1000;
        assert_eq!(state.effective_lr(), 1.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // at t = 1 the bias corrections cancel: m̂ = g, v̂ = g²
        let state = OptimizerState::new(1, cfg(1e-2, 0.0, 0));
        let (q, _) = adamw_step(&[3.0], &[1.0], &state).unwrap();
        assert!(((3.0 - q[0]) - 1e-2).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let state = OptimizerState::new(2, AdamWConfig::default());
        assert!(adamw_step(&[1.0, 2.0], &[1.0], &state).is_err());
        assert!(adamw_step(&[1.0], &[1.0], &state).is_err());
    }

    #[test]
    fn step_counter_is_monotone() {
        let mut state = OptimizerState::new(1, AdamWConfig::default());
        let mut p = vec![1.0];
        for i in 0..5 {
            assert_eq!(state.step, i);
            let (q, s) = adamw_step(&p, &[0.3], &state).unwrap();
            p = q;
            state = s;
        }
    }
}
