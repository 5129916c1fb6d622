//! Ordinary least squares.

use serde::{Deserialize, Serialize};

use super::Regressor;
use crate::linalg::{dot, Cholesky, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub r_squared: f64,
}

const RANK_TOL: f64 = 1e-10;

pub fn fit_linear(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    let names: Vec<String> = (0..x.cols()).map(|j| format!("column {j}")).collect();
    fit_linear_named(x, y, &names)
}

/// Least squares via the normal equations on centred, scaled columns, with
/// one round of iterative refinement.
pub fn fit_linear_named(x: &Matrix, y: &[f64], names: &[String]) -> Result<LinearModel> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::LengthMismatch { left: n, right: y.len() });
    }
    if n < p + 1 {
        return Err(Error::TooFewObservations { needed: p + 1, got: n });
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::ConstantTarget);
    }
    let x_mean: Vec<f64> = (0..p).map(|j| x.column(j).iter().sum::<f64>() / n as f64).collect();
    let mut xc = x.clone();
    for i in 0..n {
        for (v, m) in xc.row_mut(i).iter_mut().zip(&x_mean) {
            *v -= m;
        }
    }
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let xt = xc.transpose();
    let gram = xt.matmul(&xc);
    let scale: Vec<f64> = (0..p).map(|j| gram[(j, j)].sqrt()).collect();
    if let Some(j) = scale.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Collinear(vec![names[j].clone()]));
    }
    let mut corr = gram.clone();
    for i in 0..p {
        for j in 0..p {
            corr[(i, j)] /= scale[i] * scale[j];
        }
    }
    let chol = Cholesky::factor_with_tolerance(&corr, RANK_TOL)
        .map_err(|f| Error::Collinear(collinear_set(&corr, f.column, names)))?;

    let rhs: Vec<f64> = xt.matvec(&yc).iter().zip(&scale).map(|(v, s)| v / s).collect();
    let mut w_scaled = chol.solve(&rhs);
    // refine: solve for the correction from the residual of the normal equations
    let resid_ne: Vec<f64> = rhs
        .iter()
        .zip(corr.matvec(&w_scaled))
        .map(|(r, c)| r - c)
        .collect();
    for (w, d) in w_scaled.iter_mut().zip(chol.solve(&resid_ne)) {
        *w += d;
    }
    let weights: Vec<f64> = w_scaled.iter().zip(&scale).map(|(w, s)| w / s).collect();
    let intercept = y_mean - dot(&weights, &x_mean);
    let ss_res: f64 = x
        .iter_rows()
        .zip(y)
        .map(|(row, yi)| (yi - dot(row, &weights) - intercept).powi(2))
        .sum();
    Ok(LinearModel {
        weights,
        intercept,
        r_squared: 1.0 - ss_res / ss_tot,
    })
}

/// Column `j` plus the earlier columns that explain it.
fn collinear_set(corr: &Matrix, j: usize, names: &[String]) -> Vec<String> {
    let head: Vec<usize> = (0..j).collect();
    let mut out = Vec::new();
    if !head.is_empty() {
        let sub = corr.select_rows(&head).transpose().select_rows(&head);
        if let Ok(c) = Cholesky::factor(&sub) {
            let rhs: Vec<f64> = head.iter().map(|&i| corr[(i, j)]).collect();
            let beta = c.solve(&rhs);
            out.extend(
                head.iter()
                    .zip(beta)
                    .filter(|(_, b)| b.abs() > 1e-8)
                    .map(|(&i, _)| names[i].clone()),
            );
        }
    }
    out.push(names[j].clone());
    out
}

impl LinearModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }
}

impl Regressor for LinearModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows().map(|r| self.predict_row(r)).collect()
    }
}
