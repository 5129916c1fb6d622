//! Bias-corrected Adam updates for minimisation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

/// One Adam step moving `params` against `grads`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    if state.m.len() != params.len() {
        *state = AdamState::new(params.len());
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t);
    let c2 = 1.0 - cfg.beta2.powi(state.t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = vec![1.5, -2.0];
        let mut s = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::with_lr(0.1));
        }
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let cfg = AdamConfig::with_lr(0.05);
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2);
        let g = 0.37;
        adam_step(&mut p, &[g, 1000.0 * g], &mut s, &cfg);
        let expected = cfg.lr * g / (g + cfg.eps);
        assert!((p[0] + expected).abs() < 1e-15);
        assert!((p[0].abs() - cfg.lr).abs() < 1e-8);
        assert!((p[0] - p[1]).abs() < 1e-7 * cfg.lr);
    }

    #[test]
    fn minimises_quadratic() {
        let mut p = vec![3.0];
        let mut s = AdamState::new(1);
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 1.0);
            adam_step(&mut p, &[g], &mut s, &AdamConfig::with_lr(0.01));
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
