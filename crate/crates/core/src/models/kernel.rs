//! Squared-exponential kernel and kernel ridge regression.

use serde::{Deserialize, Serialize};

use super::Regressor;
use crate::linalg::{dot, Cholesky, Matrix};
use crate::{Error, Result};

/// `k(a, b) = σ_f² · exp(−‖a − b‖² / (2ℓ²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub lengthscale: f64,
    pub signal_variance: f64,
}

impl RbfKernel {
    pub fn new(lengthscale: f64, signal_variance: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidParameter(format!("lengthscale must be positive, got {lengthscale}")));
        }
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "signal variance must be positive, got {signal_variance}"
            )));
        }
        Ok(RbfKernel { lengthscale, signal_variance })
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_variance * (-sq_dist(a, b) / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    /// Gram matrix with rows indexed by `a` and columns by `b`.
    pub fn matrix(&self, a: &Matrix, b: &Matrix) -> Matrix {
        let mut k = Matrix::zeros(a.rows(), b.rows());
        for i in 0..a.rows() {
            let ai = a.row(i);
            for j in 0..b.rows() {
                k[(i, j)] = self.eval(ai, b.row(j));
            }
        }
        k
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rbf_kernel(a: &Matrix, b: &Matrix, lengthscale: f64, signal_variance: f64) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::LengthMismatch { left: a.cols(), right: b.cols() });
    }
    Ok(RbfKernel::new(lengthscale, signal_variance)?.matrix(a, b))
}

/// Median Euclidean distance over distinct pairs of rows; 1.0 when every
/// row coincides.
pub fn median_pairwise_distance(x: &Matrix) -> f64 {
    let mut d = Vec::with_capacity(x.rows() * x.rows().saturating_sub(1) / 2);
    for i in 0..x.rows() {
        for j in i + 1..x.rows() {
            d.push(sq_dist(x.row(i), x.row(j)).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    let med = if d.len() % 2 == 0 { 0.5 * (d[m - 1] + d[m]) } else { d[m] };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRidgeModel {
    pub support: Matrix,
    pub dual_coefficients: Vec<f64>,
    pub kernel: RbfKernel,
    pub lambda: f64,
}

/// Solves `(K + λI) c = y` by Cholesky.
pub fn fit_kernel_ridge(x: &Matrix, y: &[f64], kernel: RbfKernel, lambda: f64) -> Result<KernelRidgeModel> {
    if x.rows() != y.len() {
        return Err(Error::LengthMismatch { left: x.rows(), right: y.len() });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("ridge λ must be positive, got {lambda}")));
    }
    let mut k = kernel.matrix(x, x);
    k.add_diagonal(lambda);
    let chol = Cholesky::factor(&k).map_err(|f| {
        Error::NotPositiveDefinite(format!(
            "kernel matrix pivot {:.3e} at row {}; try a larger ridge λ than {lambda}",
            f.pivot, f.column
        ))
    })?;
    Ok(KernelRidgeModel {
        support: x.clone(),
        dual_coefficients: chol.solve(y),
        kernel,
        lambda,
    })
}

impl Regressor for KernelRidgeModel {
    fn n_features(&self) -> usize {
        self.support.cols()
    }

    fn predict(&self, x: &Matrix) -> Vec<f64> {
        let k = self.kernel.matrix(x, &self.support);
        k.iter_rows().map(|r| dot(r, &self.dual_coefficients)).collect()
    }
}
