//! Exact Gaussian process regression with an RBF kernel. Hyperparameters
//! are fitted by maximising the marginal log likelihood with Adam in log
//! space.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::kernel::{median_pairwise_distance, sq_dist, RbfKernel};
use super::Regressor;
use crate::linalg::{dot, Cholesky, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GpHyper {
    /// Lengthscale from the median pairwise input distance, signal variance
    /// from the targets, noise at a tenth of that.
    pub fn heuristic(x: &Matrix, y: &[f64]) -> Self {
        let n = y.len().max(1) as f64;
        let m = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let var = if var > 0.0 { var } else { 1.0 };
        GpHyper {
            lengthscale: median_pairwise_distance(x),
            signal_variance: var,
            noise_variance: 0.1 * var,
        }
    }

    fn kernel(&self) -> RbfKernel {
        RbfKernel { lengthscale: self.lengthscale, signal_variance: self.signal_variance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub adam: AdamConfig,
    pub steps: usize,
    pub noise_floor: f64,
    /// Consecutive rejected steps tolerated before giving up.
    pub max_rejections: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            adam: AdamConfig::with_lr(0.05),
            steps: 200,
            noise_floor: 1e-6,
            max_rejections: 50,
        }
    }
}

/// Unconstrained coordinates: `[ln ℓ, ln σ_f², ln(σ_n² − floor)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogParams(pub [f64; 3]);

impl LogParams {
    pub fn from_hyper(h: &GpHyper, floor: f64) -> Self {
        LogParams([
            h.lengthscale.ln(),
            h.signal_variance.ln(),
            (h.noise_variance - floor).max(1e-12).ln(),
        ])
    }

    pub fn to_hyper(self, floor: f64) -> GpHyper {
        GpHyper {
            lengthscale: self.0[0].exp(),
            signal_variance: self.0[1].exp(),
            noise_variance: floor + self.0[2].exp(),
        }
    }
}

/// Marginal log likelihood and its gradient with respect to [`LogParams`].
/// Fails when `K + σ_n²I` cannot be factorised.
pub fn mll_with_gradient(x: &Matrix, y: &[f64], theta: LogParams, floor: f64) -> Result<(f64, [f64; 3])> {
    let h = theta.to_hyper(floor);
    let n = y.len();
    let kern = h.kernel();
    let k = kern.matrix(x, x);
    let mut ky = k.clone();
    ky.add_diagonal(h.noise_variance);
    let chol = Cholesky::factor(&ky)
        .map_err(|f| Error::NotPositiveDefinite(format!("pivot {:.3e} at row {}", f.pivot, f.column)))?;
    let alpha = chol.solve(y);
    let mll = -0.5 * dot(y, &alpha) - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();

    // d MLL / dθ = ½ tr((ααᵀ − K_y⁻¹) ∂K_y/∂θ)
    let inv = chol.inverse();
    let l2 = h.lengthscale * h.lengthscale;
    let noise_excess = h.noise_variance - floor;
    let mut g = [0.0; 3];
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - inv[(i, j)];
            let kij = k[(i, j)];
            g[0] += w * kij * sq_dist(x.row(i), x.row(j)) / l2;
            g[1] += w * kij;
        }
        g[2] += (alpha[i] * alpha[i] - inv[(i, i)]) * noise_excess;
    }
    for v in &mut g {
        *v *= 0.5;
    }
    if !mll.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimization("non-finite marginal log likelihood".into()));
    }
    Ok((mll, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub support: Matrix,
    pub hyper: GpHyper,
    /// Lower factor of `K + σ_n²I` (plus `jitter` on the diagonal).
    pub cholesky: Cholesky,
    pub alpha: Vec<f64>,
    pub jitter: f64,
    pub mll: f64,
    pub initial_mll: f64,
    pub mll_trace: Vec<f64>,
}

impl GpModel {
    /// Conditions a zero-mean GP on `(x, y)` with fixed hyperparameters.
    pub fn condition(x: &Matrix, y: &[f64], hyper: GpHyper) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::LengthMismatch { left: x.rows(), right: y.len() });
        }
        RbfKernel::new(hyper.lengthscale, hyper.signal_variance)?;
        if !(hyper.noise_variance > 0.0) {
            return Err(Error::InvalidParameter("noise variance must be positive".into()));
        }
        let mut ky = hyper.kernel().matrix(x, x);
        ky.add_diagonal(hyper.noise_variance);
        let (cholesky, jitter) = Cholesky::factor_with_jitter(&ky)?;
        let alpha = cholesky.solve(y);
        let mll = -0.5 * dot(y, &alpha) - 0.5 * cholesky.log_det() - 0.5 * y.len() as f64 * (2.0 * PI).ln();
        Ok(GpModel {
            support: x.clone(),
            hyper,
            cholesky,
            alpha,
            jitter,
            mll,
            initial_mll: mll,
            mll_trace: vec![mll],
        })
    }

    /// Predictive mean and variance (including observation noise).
    pub fn predict_with_variance(&self, xs: &Matrix) -> (Vec<f64>, Vec<f64>) {
        let kern = self.hyper.kernel();
        let kstar = kern.matrix(xs, &self.support);
        let mut mean = Vec::with_capacity(xs.rows());
        let mut var = Vec::with_capacity(xs.rows());
        for (i, ks) in kstar.iter_rows().enumerate() {
            mean.push(dot(ks, &self.alpha));
            let v = self.cholesky.solve_lower(ks);
            let prior = kern.eval(xs.row(i), xs.row(i));
            let latent = (prior - dot(&v, &v)).max(0.0);
            var.push(latent + self.hyper.noise_variance);
        }
        (mean, var)
    }
}

impl Regressor for GpModel {
    fn n_features(&self) -> usize {
        self.support.cols()
    }

    fn predict(&self, x: &Matrix) -> Vec<f64> {
        let k = self.hyper.kernel().matrix(x, &self.support);
        k.iter_rows().map(|r| dot(r, &self.alpha)).collect()
    }
}

pub fn predict_gp(model: &GpModel, xs: &Matrix) -> (Vec<f64>, Vec<f64>) {
    model.predict_with_variance(xs)
}

/// Maximises the marginal log likelihood from `init` (or the heuristic
/// initialisation) and returns the model at the best hyperparameters seen.
pub fn fit_gp(x: &Matrix, y: &[f64], init: Option<GpHyper>, cfg: &GpConfig) -> Result<GpModel> {
    if x.rows() != y.len() {
        return Err(Error::LengthMismatch { left: x.rows(), right: y.len() });
    }
    if y.len() < 3 {
        return Err(Error::TooFewObservations { needed: 3, got: y.len() });
    }
    let init = init.unwrap_or_else(|| GpHyper::heuristic(x, y));
    let floor = cfg.noise_floor;
    let mut theta = LogParams::from_hyper(&init, floor);
    let (mut mll, mut grad) = mll_with_gradient(x, y, theta, floor)?;
    let initial_mll = mll;
    let mut best = (mll, theta);
    let mut trace = vec![mll];
    let mut adam = cfg.adam;
    let mut state = AdamState::new(3);
    let mut rejections = 0usize;
    let mut step = 0usize;
    while step < cfg.steps {
        let mut next = theta;
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let saved = state.clone();
        adam_step(&mut next.0, &neg, &mut state, &adam);
        match mll_with_gradient(x, y, next, floor) {
            Ok((m, g)) => {
                theta = next;
                mll = m;
                grad = g;
                rejections = 0;
                step += 1;
                trace.push(mll);
                if mll > best.0 {
                    best = (mll, theta);
                }
            }
            Err(_) => {
                state = saved;
                adam.lr *= 0.5;
                rejections += 1;
                if rejections >= cfg.max_rejections {
                    return Err(Error::Optimization(format!(
                        "{rejections} consecutive rejected steps at step {step}"
                    )));
                }
            }
        }
    }
    let mut model = GpModel::condition(x, y, best.1.to_hyper(floor))?;
    model.initial_mll = initial_mll;
    model.mll_trace = trace;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::kernel::fit_kernel_ridge;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(n: usize) -> (Matrix, Vec<f64>) {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * 6.0 / (n - 1) as f64).collect();
        (Matrix::from_vec(n, 1, xs.clone()).unwrap(), xs.iter().map(|v| v.sin()).collect())
    }

    #[test]
    fn noise_free_interpolation() {
        let (x, y) = sine(15);
        let m = fit_gp(&x, &y, None, &GpConfig::default()).unwrap();
        let (mean, var) = m.predict_with_variance(&x);
        for (p, t) in mean.iter().zip(&y) {
            assert!((p - t).abs() < 1e-3, "{p} vs {t}");
        }
        assert!(var.iter().all(|v| *v > 0.0));
        assert!(m.mll >= m.initial_mll);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| r[0].sin() + 0.3 * r[1] + rng.gen_range(-0.1..0.1)).collect();
        let theta = LogParams([0.2, -0.1, -2.0]);
        let (_, g) = mll_with_gradient(&x, &y, theta, 1e-6).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut up = theta;
            up.0[k] += h;
            let mut dn = theta;
            dn.0[k] -= h;
            let fd = (mll_with_gradient(&x, &y, up, 1e-6).unwrap().0 - mll_with_gradient(&x, &y, dn, 1e-6).unwrap().0) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-4 * fd.abs().max(g[k].abs()).max(1e-4), "k={k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn variance_behaviour() {
        let (x, y) = sine(10);
        let hyper = GpHyper { lengthscale: 0.8, signal_variance: 1.3, noise_variance: 1e-6 };
        let m = GpModel::condition(&x, &y, hyper).unwrap();
        let (_, v) = m.predict_with_variance(&x);
        assert!(v.iter().all(|v| *v < 1e-4));
        let far = Matrix::from_rows(&[[1e3]]).unwrap();
        let (mu, v) = m.predict_with_variance(&far);
        assert!(mu[0].abs() < 1e-12);
        assert!((v[0] - (1.3 + 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn factor_reconstructs_and_log_det_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 2.0).collect();
        let hyper = GpHyper { lengthscale: 0.7, signal_variance: 1.0, noise_variance: 0.05 };
        let m = GpModel::condition(&x, &y, hyper).unwrap();
        let mut ky = hyper.kernel().matrix(&x, &x);
        ky.add_diagonal(0.05);
        let rec = m.cholesky.reconstruct();
        assert!(rec.max_abs_diff(&ky) <= 1e-9 * ky.trace() / 12.0);
        let l = m.cholesky.l();
        for i in 0..12 {
            assert!(l[(i, i)] > 0.0);
            for j in i + 1..12 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn matches_kernel_ridge_means() {
        let (x, y) = sine(12);
        let hyper = GpHyper { lengthscale: 0.9, signal_variance: 1.7, noise_variance: 0.02 };
        let gp = GpModel::condition(&x, &y, hyper).unwrap();
        let kr = fit_kernel_ridge(&x, &y, RbfKernel::new(0.9, 1.7).unwrap(), 0.02).unwrap();
        let q = Matrix::from_vec(5, 1, vec![-1.0, 0.3, 2.2, 4.9, 7.5]).unwrap();
        for (a, b) in gp.predict(&q).iter().zip(kr.predict(&q)) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn too_few_rows() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(fit_gp(&x, &[0.0, 1.0], None, &GpConfig::default()).is_err());
    }
}
