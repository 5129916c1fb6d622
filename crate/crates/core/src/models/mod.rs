//! Regression backends behind a shared fit / predict / evaluate contract.
//!
//! [`TrainedModel`] wraps a backend with the feature z-scores and target
//! standardisation learned from the training rows, so callers always pass
//! raw feature values and get predictions on the training target scale.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::stats::{rmse, z_normalize, ZScore};
use crate::{Error, Result};

pub mod adam;
pub mod gp;
pub mod kernel;
pub mod linear;
pub mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gp::{fit_gp, predict_gp, GpConfig, GpHyper, GpModel};
pub use kernel::{fit_kernel_ridge, rbf_kernel, KernelRidgeModel, RbfKernel};
pub use linear::{fit_linear, LinearModel};
pub use mlp::{fit_mlp, MlpConfig, MlpModel};

/// Anything that maps feature rows to point predictions.
pub trait Regressor {
    fn n_features(&self) -> usize;

    fn predict(&self, x: &Matrix) -> Vec<f64>;
}

impl<F: Fn(&[f64]) -> f64> Regressor for (usize, F) {
    fn n_features(&self) -> usize {
        self.0
    }

    fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows().map(|r| (self.1)(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Kridge,
    Gp,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Linear, ModelKind::Kridge, ModelKind::Gp, ModelKind::Mlp];

    pub fn token(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Kridge => "kridge",
            ModelKind::Gp => "gp",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::Parse(format!("unknown model `{s}` (expected linear, kridge, gp or mlp)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

pub const TRAIN_FRACTION: f64 = 0.8;

/// Seeded Fisher–Yates shuffle; the first `round(0.8 n)` indices train.
pub fn train_test_split(n: usize, seed: u64) -> Result<Split> {
    if n < 5 {
        return Err(Error::TooFewObservations { needed: 5, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    let test_indices = idx.split_off(n_train);
    Ok(Split { train_indices: idx, test_indices, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetScale {
    #[default]
    Raw,
    /// `ln(count + 1)`.
    Log1p,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backend {
    Linear(LinearModel),
    Kridge(KernelRidgeModel),
    Gp(GpModel),
    Mlp(MlpModel),
}

impl Backend {
    pub fn kind(&self) -> ModelKind {
        match self {
            Backend::Linear(_) => ModelKind::Linear,
            Backend::Kridge(_) => ModelKind::Kridge,
            Backend::Gp(_) => ModelKind::Gp,
            Backend::Mlp(_) => ModelKind::Mlp,
        }
    }

    fn as_regressor(&self) -> &dyn Regressor {
        match self {
            Backend::Linear(m) => m,
            Backend::Kridge(m) => m,
            Backend::Gp(m) => m,
            Backend::Mlp(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kridge_lambda: f64,
    /// `None` uses the median pairwise distance of the normalised inputs.
    pub kridge_lengthscale: Option<f64>,
    pub gp: GpConfig,
    pub mlp: MlpConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kridge_lambda: 1.0,
            kridge_lengthscale: None,
            gp: GpConfig::default(),
            mlp: MlpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub feature_names: Vec<String>,
    pub feature_scaling: Vec<ZScore>,
    pub target_scale: TargetScale,
    /// Standardisation applied to targets before the backend saw them.
    pub target_standardization: ZScore,
    pub rmse_train: f64,
    pub backend: Backend,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.backend.kind()
    }

    pub fn normalize(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (v, z) in out.row_mut(i).iter_mut().zip(&self.feature_scaling) {
                *v = z.apply(*v);
            }
        }
        out
    }

    /// GP predictive variance on the target scale; `None` for other kinds.
    pub fn predictive_variance(&self, x: &Matrix) -> Option<Vec<f64>> {
        match &self.backend {
            Backend::Gp(gp) => {
                let s2 = self.target_standardization.std.powi(2);
                let (_, var) = gp.predict_with_variance(&self.normalize(x));
                Some(var.into_iter().map(|v| v * s2).collect())
            }
            _ => None,
        }
    }
}

impl Regressor for TrainedModel {
    fn n_features(&self) -> usize {
        self.feature_scaling.len()
    }

    fn predict(&self, x: &Matrix) -> Vec<f64> {
        let z = self.normalize(x);
        self.backend
            .as_regressor()
            .predict(&z)
            .into_iter()
            .map(|v| self.target_standardization.invert(v))
            .collect()
    }
}

/// Fits one backend on raw training features. Feature z-scores and target
/// standardisation come from these rows only.
pub fn fit_model(
    kind: ModelKind,
    x_train: &Matrix,
    y_train: &[f64],
    feature_names: &[String],
    target_scale: TargetScale,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    if x_train.rows() != y_train.len() {
        return Err(Error::LengthMismatch { left: x_train.rows(), right: y_train.len() });
    }
    if feature_names.len() != x_train.cols() {
        return Err(Error::LengthMismatch { left: feature_names.len(), right: x_train.cols() });
    }
    let feature_scaling = (0..x_train.cols())
        .map(|j| {
            z_normalize(&x_train.column(j)).map_err(|e| match e {
                Error::ZeroVariance(_) => Error::Collinear(vec![feature_names[j].clone()]),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let target_standardization = z_normalize(y_train).map_err(|e| match e {
        Error::ZeroVariance(_) => Error::ConstantTarget,
        other => other,
    })?;
    let mut model = TrainedModel {
        feature_names: feature_names.to_vec(),
        feature_scaling,
        target_scale,
        target_standardization,
        rmse_train: 0.0,
        backend: Backend::Linear(LinearModel { weights: vec![], intercept: 0.0, r_squared: 0.0 }),
    };
    let xz = model.normalize(x_train);
    let yz: Vec<f64> = y_train.iter().map(|v| target_standardization.apply(*v)).collect();
    model.backend = match kind {
        ModelKind::Linear => Backend::Linear(linear::fit_linear_named(&xz, &yz, feature_names)?),
        ModelKind::Kridge => {
            let ell = cfg
                .kridge_lengthscale
                .unwrap_or_else(|| kernel::median_pairwise_distance(&xz));
            Backend::Kridge(fit_kernel_ridge(&xz, &yz, RbfKernel::new(ell, 1.0)?, cfg.kridge_lambda)?)
        }
        ModelKind::Gp => Backend::Gp(fit_gp(&xz, &yz, None, &cfg.gp)?),
        ModelKind::Mlp => Backend::Mlp(fit_mlp(&xz, &yz, &cfg.mlp)?.0),
    };
    model.rmse_train = rmse(&model.predict(x_train), y_train)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelKind,
    pub target_scale: TargetScale,
    pub rmse_test: f64,
    pub rmse_train: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_squared: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_mll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub predictive_variance: Option<Vec<f64>>,
}

/// Test-set RMSE on the scale the model was trained on.
pub fn evaluate(model: &TrainedModel, x_test: &Matrix, y_test: &[f64]) -> Result<ModelReport> {
    let pred = model.predict(x_test);
    let (r_squared, final_mll) = match &model.backend {
        Backend::Linear(m) => (Some(m.r_squared), None),
        Backend::Gp(m) => (None, Some(m.mll)),
        _ => (None, None),
    };
    Ok(ModelReport {
        model: model.kind(),
        target_scale: model.target_scale,
        rmse_test: rmse(&pred, y_test)?,
        rmse_train: model.rmse_train,
        r_squared,
        final_mll,
        predictive_variance: model.predictive_variance(x_test),
    })
}

/// RMSE of always predicting the training mean.
pub fn baseline_rmse(y_train: &[f64], y_test: &[f64]) -> Result<f64> {
    if y_train.is_empty() {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    let m = y_train.iter().sum::<f64>() / y_train.len() as f64;
    rmse(&vec![m; y_test.len()], y_test)
}
