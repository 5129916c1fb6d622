//! Fully connected network `input → 10 → 10 → 1` with ReLU hidden units,
//! trained full-batch on mean squared error with Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::Regressor;
use crate::linalg::Matrix;
use crate::{Error, Result};

pub const HIDDEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub seed: u64,
    /// Upper bound on full-batch epochs.
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Share of training rows held out for early stopping; 0 trains on
    /// every row for exactly `epochs` epochs.
    pub validation_fraction: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            seed: 0,
            epochs: 2000,
            adam: AdamConfig::with_lr(0.01),
            validation_fraction: 0.2,
            patience: 50,
        }
    }
}

/// Parameters are stored flat, layer by layer: weights (`out × in`,
/// row-major) then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub n_inputs: usize,
    pub params: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Layer {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
}

impl MlpModel {
    fn layers(&self) -> [Layer; 3] {
        layout(self.n_inputs)
    }

    pub fn n_params(n_inputs: usize) -> usize {
        let l = layout(n_inputs)[2];
        l.b + l.n_out
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init(n_inputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; Self::n_params(n_inputs)];
        for l in layout(n_inputs) {
            let a = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
            for p in &mut params[l.w..l.b] {
                *p = rng.gen_range(-a..=a);
            }
        }
        MlpModel { n_inputs, params }
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let [l1, l2, l3] = self.layers();
        let h1 = dense(&self.params, l1, x, true);
        let h2 = dense(&self.params, l2, &h1, true);
        dense(&self.params, l3, &h2, false)[0]
    }

    /// Mean squared error over the rows of `x` and its gradient with
    /// respect to `params`.
    pub fn loss_and_gradient(&self, x: &Matrix, y: &[f64]) -> (f64, Vec<f64>) {
        let [l1, l2, l3] = self.layers();
        let p = &self.params;
        let n = x.rows() as f64;
        let mut grad = vec![0.0; p.len()];
        let mut loss = 0.0;
        for (row, &target) in x.iter_rows().zip(y) {
            let z1 = affine(p, l1, row);
            let h1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
            let z2 = affine(p, l2, &h1);
            let h2: Vec<f64> = z2.iter().map(|v| v.max(0.0)).collect();
            let out = affine(p, l3, &h2)[0];
            let err = out - target;
            loss += err * err;

            let d3 = [2.0 * err / n];
            let d2 = backprop(p, &mut grad, l3, &h2, &d3, &z2);
            let d1 = backprop(p, &mut grad, l2, &h1, &d2, &z1);
            backprop_input(&mut grad, l1, row, &d1);
        }
        (loss / n, grad)
    }
}

fn layout(n_inputs: usize) -> [Layer; 3] {
    let dims = [(n_inputs, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, 1)];
    let mut off = 0;
    dims.map(|(n_in, n_out)| {
        let w = off;
        let b = w + n_in * n_out;
        off = b + n_out;
        Layer { n_in, n_out, w, b }
    })
}

fn affine(p: &[f64], l: Layer, x: &[f64]) -> Vec<f64> {
    (0..l.n_out)
        .map(|o| {
            let w = &p[l.w + o * l.n_in..l.w + (o + 1) * l.n_in];
            p[l.b + o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn dense(p: &[f64], l: Layer, x: &[f64], relu: bool) -> Vec<f64> {
    let mut z = affine(p, l, x);
    if relu {
        z.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    z
}

/// Accumulates gradients of layer `l` given the upstream delta, and returns
/// the delta at the pre-activations `z_prev` feeding it.
fn backprop(p: &[f64], grad: &mut [f64], l: Layer, input: &[f64], delta: &[f64], z_prev: &[f64]) -> Vec<f64> {
    let mut back = vec![0.0; l.n_in];
    for o in 0..l.n_out {
        let d = delta[o];
        grad[l.b + o] += d;
        for i in 0..l.n_in {
            grad[l.w + o * l.n_in + i] += d * input[i];
            back[i] += d * p[l.w + o * l.n_in + i];
        }
    }
    for (b, z) in back.iter_mut().zip(z_prev) {
        if *z <= 0.0 {
            *b = 0.0;
        }
    }
    back
}

fn backprop_input(grad: &mut [f64], l: Layer, input: &[f64], delta: &[f64]) {
    for o in 0..l.n_out {
        grad[l.b + o] += delta[o];
        for i in 0..l.n_in {
            grad[l.w + o * l.n_in + i] += delta[o] * input[i];
        }
    }
}

impl Regressor for MlpModel {
    fn n_features(&self) -> usize {
        self.n_inputs
    }

    fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows().map(|r| self.forward(r)).collect()
    }
}

/// Full-batch Adam on mean squared error. Returns the model and the
/// training loss before each epoch followed by the final loss.
///
/// With a positive `validation_fraction`, a seeded subset of rows is held
/// out, training stops once the held-out loss has not improved for
/// `patience` epochs, and the parameters with the lowest held-out loss are
/// returned.
pub fn fit_mlp(x: &Matrix, y: &[f64], cfg: &MlpConfig) -> Result<(MlpModel, Vec<f64>)> {
    if x.rows() != y.len() {
        return Err(Error::LengthMismatch { left: x.rows(), right: y.len() });
    }
    if y.len() < 5 {
        return Err(Error::TooFewObservations { needed: 5, got: y.len() });
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(Error::InvalidParameter(format!(
            "validation fraction {} outside [0, 1)",
            cfg.validation_fraction
        )));
    }
    let n_val = (cfg.validation_fraction * y.len() as f64).round() as usize;
    let (fit_x, fit_y, val) = if n_val == 0 || n_val >= y.len() - 2 {
        (x.clone(), y.to_vec(), None)
    } else {
        let mut idx: Vec<usize> = (0..y.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
        let (v, f) = idx.split_at(n_val);
        let pick = |rows: &[usize]| rows.iter().map(|&i| y[i]).collect::<Vec<_>>();
        (x.select_rows(f), pick(f), Some((x.select_rows(v), pick(v))))
    };

    let mut model = MlpModel::init(x.cols(), cfg.seed);
    let mut state = AdamState::new(model.params.len());
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let (loss, grad) = model.loss_and_gradient(&fit_x, &fit_y);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        losses.push(loss);
        if let Some((vx, vy)) = &val {
            let (vl, _) = model.loss_and_gradient(vx, vy);
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
        adam_step(&mut model.params, &grad, &mut state, &cfg.adam);
    }
    if let Some((vx, vy)) = &val {
        let (vl, _) = model.loss_and_gradient(vx, vy);
        if let Some((b, params)) = best {
            if !(vl < b) {
                model.params = params;
            }
        }
    }
    let (loss, _) = model.loss_and_gradient(&fit_x, &fit_y);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(losses.len()));
    }
    losses.push(loss);
    Ok((model, losses))
}
