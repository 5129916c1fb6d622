//! Stage orchestration shared by the command-line front end and the
//! integration tests: train/evaluate bundles, explanation exports and
//! gauge lag reports.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::explain::{beeswarm_for_model, partial_dependence, subsample_background, BeeswarmRecord, PartialDependenceCurve};
use crate::linalg::Matrix;
use crate::mining::{Dataset, WqVar};
use crate::models::{
    baseline_rmse, evaluate, fit_model, train_test_split, ModelKind, ModelReport, Split, TargetScale, TrainConfig,
    TrainedModel,
};
use crate::stats::{tlcc, LagProfile};
use crate::timeseries::{aggregate_gauge_to_hourly, ForecastStore, GaugeSeries, WeatherVariable};
use crate::{Error, Result};

/// Contents of `model.json`: every model trained on one dataset together
/// with the split that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub site: String,
    pub wq_var: WqVar,
    pub feature_names: Vec<String>,
    pub split: Split,
    pub models: Vec<TrainedModel>,
}

impl ModelBundle {
    /// The model of `kind`, or the first one when `kind` is `None`.
    pub fn model(&self, kind: Option<ModelKind>) -> Result<&TrainedModel> {
        match kind {
            None => self.models.first(),
            Some(k) => self.models.iter().find(|m| m.kind() == k),
        }
        .ok_or_else(|| Error::InvalidParameter(format!("model bundle has no `{}` model", kind.map_or("any".into(), |k| k.to_string()))))
    }
}

/// Contents of `report.json`. `rmse` holds the test RMSE per model, keyed
/// by model name, alongside the mean-predictor baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub site: String,
    pub forecast_location: String,
    pub wq_var: WqVar,
    pub target_scale: TargetScale,
    pub features: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub rmse: BTreeMap<ModelKind, f64>,
    pub baseline_rmse: f64,
    pub models: Vec<ModelReport>,
}

/// Splits `dataset`, fits each requested backend on the training rows and
/// scores it on the held-out rows. Backends train concurrently.
pub fn train_models(
    dataset: &Dataset,
    kinds: &[ModelKind],
    split_seed: u64,
    cfg: &TrainConfig,
) -> Result<(ModelBundle, TrainReport)> {
    if kinds.is_empty() {
        return Err(Error::InvalidParameter("no model kinds requested".into()));
    }
    let split = train_test_split(dataset.n_rows(), split_seed)?;
    let x_train = dataset.x.select_rows(&split.train_indices);
    let x_test = dataset.x.select_rows(&split.test_indices);
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset.y[i]).collect::<Vec<f64>>();
    let (y_train, y_test) = (pick(&split.train_indices), pick(&split.test_indices));
    let scale = if dataset.log_target { TargetScale::Log1p } else { TargetScale::Raw };

    let fitted: Vec<(TrainedModel, ModelReport)> = kinds
        .par_iter()
        .map(|&k| {
            let m = fit_model(k, &x_train, &y_train, &dataset.feature_names, scale, cfg)?;
            let r = evaluate(&m, &x_test, &y_test)?;
            Ok((m, r))
        })
        .collect::<Result<_>>()?;
    let (models, reports): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();

    let report = TrainReport {
        site: dataset.site.clone(),
        forecast_location: dataset.locations().join(";"),
        wq_var: dataset.wq_var,
        target_scale: scale,
        features: dataset.feature_names.clone(),
        n_train: y_train.len(),
        n_test: y_test.len(),
        rmse: reports.iter().map(|r| (r.model, r.rmse_test)).collect(),
        baseline_rmse: baseline_rmse(&y_train, &y_test)?,
        models: reports,
    };
    let bundle = ModelBundle {
        site: dataset.site.clone(),
        wq_var: dataset.wq_var,
        feature_names: dataset.feature_names.clone(),
        split,
        models,
    };
    Ok((bundle, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackgroundSource {
    /// Training rows of the bundle's split.
    Train,
    /// Every dataset row.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub background: BackgroundSource,
    /// Subsample the background to this many rows.
    pub background_size: Option<usize>,
    pub seed: u64,
    pub grid_size: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { background: BackgroundSource::Train, background_size: None, seed: 0, grid_size: 20 }
    }
}

pub struct Explanation {
    pub beeswarm: Vec<BeeswarmRecord>,
    pub partial_dependence: Vec<PartialDependenceCurve>,
}

/// Beeswarm records for every dataset row and partial dependence curves
/// for every feature with a non-degenerate range.
pub fn explain_model(
    model: &TrainedModel,
    split: &Split,
    dataset: &Dataset,
    cfg: &ExplainConfig,
) -> Result<Explanation> {
    if model.feature_names != dataset.feature_names {
        return Err(Error::InvalidParameter(format!(
            "model features [{}] do not match dataset features [{}]",
            model.feature_names.join(", "),
            dataset.feature_names.join(", ")
        )));
    }
    let background = match cfg.background {
        BackgroundSource::Train => dataset.x.select_rows(&split.train_indices),
        BackgroundSource::All => dataset.x.clone(),
    };
    let background = match cfg.background_size {
        Some(k) => subsample_background(&background, k, cfg.seed),
        None => background,
    };
    let beeswarm = beeswarm_for_model(model, &dataset.x, &background)?;
    let mut curves = Vec::new();
    for (j, name) in dataset.feature_names.iter().enumerate() {
        match partial_dependence(model, j, name, &dataset.x, cfg.grid_size) {
            Ok(c) => curves.push(c),
            Err(Error::InvalidParameter(msg)) => log::warn!("skipping partial dependence: {msg}"),
            Err(e) => return Err(e),
        }
    }
    Ok(Explanation { beeswarm, partial_dependence: curves })
}

pub fn beeswarm_csv(records: &[BeeswarmRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["instance", "feature", "raw_value", "norm_value", "shap"]).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.instance.to_string(),
            r.feature.clone(),
            r.raw_value.to_string(),
            r.norm_value.to_string(),
            r.shap.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn partial_dependence_csv(curves: &[PartialDependenceCurve]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["feature", "grid_value", "mean_prediction"]).map_err(csv_err)?;
    for c in curves {
        for (g, p) in c.grid.iter().zip(&c.mean_prediction) {
            w.write_record([c.feature.clone(), g.to_string(), p.to_string()]).map_err(csv_err)?;
        }
    }
    finish(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// One entry of `tlcc.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeLagReport {
    pub gauge_id: String,
    pub location: String,
    pub variable: WeatherVariable,
    pub coefficients: BTreeMap<i64, f64>,
    pub p_values: BTreeMap<i64, f64>,
    pub best_lag: i64,
    pub best_r: f64,
    /// Overlapping hours at the best lag.
    pub n: usize,
}

impl GaugeLagReport {
    fn from_profile(gauge_id: &str, location: &str, variable: WeatherVariable, p: &LagProfile) -> Self {
        GaugeLagReport {
            gauge_id: gauge_id.to_string(),
            location: location.to_string(),
            variable,
            coefficients: p.correlations.iter().map(|(k, r)| (*k, r.coefficient)).collect(),
            p_values: p.correlations.iter().map(|(k, r)| (*k, r.p_value)).collect(),
            best_lag: p.best_lag,
            best_r: p.best().coefficient,
            n: p.best().n,
        }
    }
}

/// Lagged correlation of each paired gauge's hourly totals against the
/// forecast series of its location.
pub fn tlcc_report(
    store: &ForecastStore,
    gauges: &[GaugeSeries],
    pairs: &[(String, String)],
    variable: WeatherVariable,
    max_lag: i64,
) -> Result<Vec<GaugeLagReport>> {
    let mut out = Vec::new();
    for (gid, loc) in pairs {
        let gauge = gauges
            .iter()
            .find(|g| &g.gauge_id == gid)
            .ok_or_else(|| Error::InvalidParameter(format!("gauge `{gid}` has no readings")))?;
        if !store.has_series(loc, variable) {
            return Err(Error::UnknownSeries { location: loc.clone(), variable: variable.token().to_string() });
        }
        let forecast = store.series(loc, variable);
        let observed: BTreeMap<_, _> = aggregate_gauge_to_hourly(gauge).into_iter().collect();
        let profile = tlcc(&forecast, &observed, max_lag)?;
        out.push(GaugeLagReport::from_profile(gid, loc, variable, &profile));
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline. Floats use the shortest decimal
/// that reads back to the same value.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn dataset_rows(dataset: &Dataset, idx: &[usize]) -> (Matrix, Vec<f64>) {
    (dataset.x.select_rows(idx), idx.iter().map(|&i| dataset.y[i]).collect())
}
