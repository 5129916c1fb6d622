//! Exhaustive search for the forecast location whose daily weather
//! aggregate correlates best with each site's bacteria counts, and
//! assembly of training matrices from the result.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::stats::{kendall_with, log_normalize, pearson, CorrelationResult, KendallVariant};
use crate::timeseries::{window_aggregate, Analyte, ForecastStore, WaterSample, WeatherVariable, WindowSpec};
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Bacteria targets searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WqVar {
    Ecoli,
    Enterococci,
}

impl WqVar {
    pub const ALL: [WqVar; 2] = [WqVar::Ecoli, WqVar::Enterococci];

    pub fn analyte(self) -> Analyte {
        match self {
            WqVar::Ecoli => Analyte::Ecoli,
            WqVar::Enterococci => Analyte::Enterococci,
        }
    }

    pub fn token(self) -> &'static str {
        self.analyte().token()
    }
}

impl fmt::Display for WqVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for WqVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WqVar::ALL
            .into_iter()
            .find(|w| w.token() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown water-quality variable `{s}` (expected ecoli or enterococci)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrType {
    Kendall,
    Pearson,
}

impl fmt::Display for CorrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrType::Kendall => "kendall",
            CorrType::Pearson => "pearson",
        })
    }
}

/// Map key: site, weather variable, water-quality variable, correlation type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub site_id: String,
    pub weather_var: WeatherVariable,
    pub wq_var: WqVar,
    pub corr_type: CorrType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestFeature {
    pub location_id: String,
    pub coefficient: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestFeatureMap {
    alpha: f64,
    entries: BTreeMap<FeatureKey, BestFeature>,
}

impl Default for BestFeatureMap {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHA)
    }
}

impl BestFeatureMap {
    pub fn new(alpha: f64) -> Self {
        BestFeatureMap { alpha, entries: BTreeMap::new() }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Keeps `candidate` iff its p-value is below alpha and its |coefficient|
    /// strictly beats the incumbent. Returns whether it was stored.
    pub fn update_best(&mut self, key: FeatureKey, candidate: BestFeature) -> bool {
        if !(candidate.p_value < self.alpha) {
            return false;
        }
        match self.entries.get(&key) {
            Some(cur) if !(candidate.coefficient.abs() > cur.coefficient.abs()) => false,
            _ => {
                self.entries.insert(key, candidate);
                true
            }
        }
    }

    pub fn get(&self, key: &FeatureKey) -> Option<&BestFeature> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FeatureKey, &BestFeature)> {
        self.entries.iter()
    }

    /// Rows of `features.json`, in key order.
    pub fn to_rows(&self) -> Vec<FeatureRow> {
        self.entries
            .iter()
            .map(|(k, v)| FeatureRow {
                site: k.site_id.clone(),
                weather_var: k.weather_var,
                wq_var: k.wq_var,
                corr_type: k.corr_type,
                location: v.location_id.clone(),
                correlation: v.coefficient,
                p_value: v.p_value,
            })
            .collect()
    }

    pub fn from_rows(rows: &[FeatureRow], alpha: f64) -> Self {
        let mut map = BestFeatureMap::new(alpha);
        for r in rows {
            map.update_best(
                FeatureKey {
                    site_id: r.site.clone(),
                    weather_var: r.weather_var,
                    wq_var: r.wq_var,
                    corr_type: r.corr_type,
                },
                BestFeature { location_id: r.location.clone(), coefficient: r.correlation, p_value: r.p_value },
            );
        }
        map
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_rows()).expect("feature rows serialise") + "\n"
    }

    /// Reads `features.json`. Rows at or above `alpha` are dropped.
    pub fn from_json(text: &str, alpha: f64) -> Result<Self> {
        let rows: Vec<FeatureRow> = serde_json::from_str(text)?;
        Ok(Self::from_rows(&rows, alpha))
    }
}

/// One row of `features.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRow {
    pub site: String,
    pub weather_var: WeatherVariable,
    pub wq_var: WqVar,
    pub corr_type: CorrType,
    pub location: String,
    pub correlation: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub alpha: f64,
    pub window: WindowSpec,
    /// Locations searched; `None` means every location in the store.
    pub locations: Option<Vec<String>>,
    pub variables: Option<Vec<WeatherVariable>>,
    pub kendall: KendallVariant,
    pub parallel: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            alpha: DEFAULT_ALPHA,
            window: WindowSpec::default(),
            locations: None,
            variables: None,
            kendall: KendallVariant::TauA,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub map: BestFeatureMap,
    pub diagnostics: Vec<String>,
}

/// Bacteria results for one site and target, in date order.
pub fn quality_series(samples: &[WaterSample], site: &str, wq: WqVar) -> Vec<(NaiveDate, f64)> {
    let mut out: Vec<(NaiveDate, f64)> = samples
        .iter()
        .filter(|s| s.site_id == site && s.analyte == wq.analyte())
        .map(|s| (s.date, s.count))
        .collect();
    out.sort_by_key(|a| a.0);
    out
}

/// `(counts, aggregates)` over the sample dates whose window is present.
pub fn candidate_pairs(
    store: &ForecastStore,
    quality: &[(NaiveDate, f64)],
    location: &str,
    variable: WeatherVariable,
    window: &WindowSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut counts = Vec::with_capacity(quality.len());
    let mut aggs = Vec::with_capacity(quality.len());
    for (date, count) in quality {
        if let Some(a) = window_aggregate(store, location, variable, *date, window)? {
            counts.push(*count);
            aggs.push(a);
        }
    }
    Ok((counts, aggs))
}

type Evaluated = (String, WeatherVariable, Option<CorrelationResult>, Option<CorrelationResult>);

fn evaluate_candidate(
    store: &ForecastStore,
    quality: &[(NaiveDate, f64)],
    location: &str,
    variable: WeatherVariable,
    cfg: &MiningConfig,
) -> Result<Evaluated> {
    let (counts, aggs) = candidate_pairs(store, quality, location, variable, &cfg.window)?;
    let (r, t) = if counts.len() < 3 {
        (None, None)
    } else {
        (pearson(&counts, &aggs).ok(), kendall_with(&counts, &aggs, cfg.kendall).ok())
    };
    Ok((location.to_string(), variable, r, t))
}

/// Runs the search over sites × targets × locations × variables, all in
/// lexicographic order. Candidate evaluation may run in parallel; the
/// reduction into the map always follows that order.
pub fn select_features(samples: &[WaterSample], store: &ForecastStore, cfg: &MiningConfig) -> Result<Selection> {
    let mut map = BestFeatureMap::new(cfg.alpha);
    let mut diagnostics = Vec::new();

    let mut locations = cfg.locations.clone().unwrap_or_else(|| store.locations());
    locations.sort();
    locations.dedup();
    let mut variables = cfg.variables.clone().unwrap_or_else(|| WeatherVariable::ALL.to_vec());
    variables.sort();
    variables.dedup();
    let candidates: Vec<(&str, WeatherVariable)> = locations
        .iter()
        .flat_map(|l| variables.iter().map(move |v| (l.as_str(), *v)))
        .filter(|(l, v)| store.has_series(l, *v))
        .collect();

    let sites: BTreeSet<&str> = samples
        .iter()
        .filter(|s| matches!(s.analyte, Analyte::Ecoli | Analyte::Enterococci))
        .map(|s| s.site_id.as_str())
        .collect();

    for site in sites {
        for wq in WqVar::ALL {
            let quality = quality_series(samples, site, wq);
            if quality.len() < 3 {
                diagnostics.push(format!(
                    "site `{site}`: {} usable {wq} samples, need at least 3; skipped",
                    quality.len()
                ));
                continue;
            }
            let eval = |&(l, v): &(&str, WeatherVariable)| evaluate_candidate(store, &quality, l, v, cfg);
            let results: Vec<Evaluated> = if cfg.parallel {
                candidates.par_iter().map(eval).collect::<Result<_>>()?
            } else {
                candidates.iter().map(eval).collect::<Result<_>>()?
            };
            for (location, variable, r, t) in results {
                for (ct, res) in [(CorrType::Pearson, r), (CorrType::Kendall, t)] {
                    if let Some(res) = res {
                        map.update_best(
                            FeatureKey { site_id: site.to_string(), weather_var: variable, wq_var: wq, corr_type: ct },
                            BestFeature { location_id: location.clone(), coefficient: res.coefficient, p_value: res.p_value },
                        );
                    }
                }
            }
        }
    }
    Ok(Selection { map, diagnostics })
}

/// Training matrix for one site and target. Feature values are the raw
/// daily aggregates; z-normalisation is learned from the training rows when
/// a model is fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub site: String,
    pub wq_var: WqVar,
    pub log_target: bool,
    pub feature_names: Vec<String>,
    pub features: Vec<(String, WeatherVariable)>,
    pub x: Matrix,
    pub y: Vec<f64>,
    pub sample_dates: Vec<NaiveDate>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    /// Distinct forecast locations feeding the features.
    pub fn locations(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.features.iter().map(|(l, _)| l).collect();
        set.into_iter().cloned().collect()
    }
}

pub fn feature_label(location: &str, variable: WeatherVariable) -> String {
    format!("{location}:{variable}")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub log_target: bool,
    /// Restrict to features at one forecast location.
    pub location: Option<String>,
    pub window: WindowSpec,
}

pub fn assemble_dataset(
    samples: &[WaterSample],
    store: &ForecastStore,
    map: &BestFeatureMap,
    site: &str,
    wq: WqVar,
    opts: &DatasetOptions,
) -> Result<Dataset> {
    let features: Vec<(String, WeatherVariable)> = map
        .iter()
        .filter(|(k, _)| k.site_id == site && k.wq_var == wq)
        .filter(|(_, v)| opts.location.as_ref().is_none_or(|l| *l == v.location_id))
        .map(|(k, v)| (v.location_id.clone(), k.weather_var))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if features.is_empty() {
        return Err(Error::EmptyFeatureSet { site: site.to_string(), target: wq.to_string() });
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    let mut dates = Vec::new();
    'samples: for (date, count) in quality_series(samples, site, wq) {
        let mut row = Vec::with_capacity(features.len());
        for (loc, var) in &features {
            match window_aggregate(store, loc, *var, date, &opts.window)? {
                Some(v) => row.push(v),
                None => continue 'samples,
            }
        }
        rows.push(row);
        y.push(count);
        dates.push(date);
    }
    if opts.log_target {
        y = log_normalize(&y)?;
    }
    let x = if rows.is_empty() {
        Matrix::zeros(0, features.len())
    } else {
        Matrix::from_rows(&rows)?
    };
    Ok(Dataset {
        site: site.to_string(),
        wq_var: wq,
        log_target: opts.log_target,
        feature_names: features.iter().map(|(l, v)| feature_label(l, *v)).collect(),
        features,
        x,
        y,
        sample_dates: dates,
    })
}
