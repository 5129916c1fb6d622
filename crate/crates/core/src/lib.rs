//! Correlation-driven feature mining over gridded weather forecasts, four
//! regression backends for bacterial water-quality targets, and exact
//! Shapley-value explanations of their predictions.
//!
//! The crate is organised bottom-up:
//!
//! - [`timeseries`]: hourly forecast store, gauge series, water samples.
//! - [`ingest`]: neutral file formats and the polling loop.
//! - [`stats`]: Pearson, Kendall, RMSE, normalisation, lagged correlation.
//! - [`mining`]: the exhaustive best-location search and dataset assembly.
//! - [`models`]: linear, kernel ridge, Gaussian process and MLP regressors.
//! - [`explain`]: exact Shapley values, beeswarm and partial dependence data.
//! - [`synth`] and [`pipeline`]: synthetic data and stage orchestration.

// `!(a < b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod explain;
pub mod ingest;
pub mod linalg;
pub mod mining;
pub mod models;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod timeseries;
pub mod util;

pub use error::{Error, Result};
pub use explain::{BeeswarmRecord, CoalitionGame, PartialDependenceCurve, ShapExplanation};
pub use ingest::IngestReport;
pub use linalg::Matrix;
pub use mining::{BestFeature, BestFeatureMap, CorrType, Dataset, FeatureKey, WqVar};
pub use models::{ModelKind, ModelReport, Regressor, Split, TrainedModel};
pub use stats::{CorrelationResult, LagProfile};
pub use timeseries::{
    Analyte, ForecastStore, GaugeSeries, HourStamp, WaterSample, WeatherVariable,
};
