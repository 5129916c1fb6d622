//! Seeded synthetic inputs with planted signals: hourly forecasts, rain
//! gauges that copy a forecast series at a known lag, and bacteria counts
//! driven by a chosen daily weather aggregate.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ingest::{
    run_file_name, write_forecast_document, write_gauge_csv, write_pairs_csv, write_samples_csv, ForecastDocument,
};
use crate::timeseries::{
    Analyte, ForecastRecord, GaugeReading, GaugeSeries, HourStamp, Reducer, WaterSample, WeatherVariable,
};
use crate::util::write_atomic;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkTransform {
    /// `baseline + signal`, floored at zero.
    Linear,
    /// `baseline · exp(signal)`.
    Exponential,
}

/// Counts at `site` respond to the daily aggregate of `weather_var` at
/// `location` (both zero-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedLink {
    pub site: usize,
    pub location: usize,
    pub weather_var: WeatherVariable,
    pub slope: f64,
    pub noise_sd: f64,
    pub transform: LinkTransform,
}

/// A gauge recording `variable` at `location`, delayed by `lag_hours`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugePlan {
    pub location: usize,
    pub variable: WeatherVariable,
    pub lag_hours: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_locations: usize,
    pub n_sites: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub samples_per_site: usize,
    pub variables: Vec<WeatherVariable>,
    pub baseline: f64,
    pub planted_links: Vec<PlantedLink>,
    pub gauges: Vec<GaugePlan>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_locations: 5,
            n_sites: 2,
            n_days: 150,
            start_date: NaiveDate::from_ymd_opt(2021, 5, 1).expect("valid date"),
            samples_per_site: 120,
            variables: vec![
                WeatherVariable::Humidity,
                WeatherVariable::PrecipMedian,
                WeatherVariable::PrecipP20,
                WeatherVariable::PrecipP80,
                WeatherVariable::Temperature,
                WeatherVariable::WindSpeed,
            ],
            baseline: 50.0,
            planted_links: vec![PlantedLink {
                site: 0,
                location: 0,
                weather_var: WeatherVariable::PrecipMedian,
                slope: 10.0,
                noise_sd: 20.0,
                transform: LinkTransform::Linear,
            }],
            gauges: vec![GaugePlan { location: 0, variable: WeatherVariable::PrecipP20, lag_hours: 1 }],
        }
    }
}

pub fn location_id(i: usize) -> String {
    format!("L{:02}", i + 1)
}

pub fn site_id(i: usize) -> String {
    format!("S{}", i + 1)
}

pub fn gauge_id(i: usize) -> String {
    format!("G{}", i + 1)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_locations == 0 || self.n_sites == 0 || self.n_days == 0 {
            return bad("n_locations, n_sites and n_days must be positive".into());
        }
        if !(self.baseline >= 0.0) {
            return bad(format!("baseline {} must be non-negative", self.baseline));
        }
        for l in &self.planted_links {
            if l.site >= self.n_sites || l.location >= self.n_locations {
                return bad(format!("planted link ({}, {}) out of range", l.site, l.location));
            }
            if !(l.noise_sd >= 0.0) || !l.slope.is_finite() {
                return bad("planted link needs finite slope and noise_sd >= 0".into());
            }
            if !self.variables.contains(&l.weather_var) {
                return bad(format!("planted variable {} is not generated", l.weather_var));
            }
        }
        for g in &self.gauges {
            if g.location >= self.n_locations || !self.variables.contains(&g.variable) {
                return bad(format!("gauge plan at location {} / {} not generated", g.location, g.variable));
            }
            if !g.variable.is_precipitation() {
                return bad(format!("gauges record precipitation, not {}", g.variable));
            }
        }
        Ok(())
    }

    fn start_hour(&self) -> HourStamp {
        HourStamp::start_of_day(self.start_date)
    }

    fn n_hours(&self) -> usize {
        self.n_days * 24
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub locations: Vec<String>,
    pub sites: Vec<String>,
    pub documents: Vec<ForecastDocument>,
    pub samples: Vec<WaterSample>,
    pub gauges: Vec<GaugeSeries>,
    pub pairs: Vec<(String, String)>,
}

pub const SYNTH_SAMPLES: &str = "samples.csv";
pub const SYNTH_GAUGES: &str = "gauges.csv";
pub const SYNTH_PAIRS: &str = "pairs.csv";
pub const SYNTH_FORECASTS: &str = "forecasts";

impl SynthOutput {
    /// Writes `forecasts/run-*.jsonl`, `samples.csv`, `gauges.csv` and
    /// `pairs.csv` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let fdir = dir.join(SYNTH_FORECASTS);
        std::fs::create_dir_all(&fdir)?;
        for doc in &self.documents {
            write_atomic(&fdir.join(run_file_name(doc.run_time)), write_forecast_document(doc).as_bytes())?;
        }
        write_atomic(&dir.join(SYNTH_SAMPLES), write_samples_csv(&self.samples).as_bytes())?;
        write_atomic(&dir.join(SYNTH_GAUGES), write_gauge_csv(&self.gauges).as_bytes())?;
        write_atomic(&dir.join(SYNTH_PAIRS), write_pairs_csv(&self.pairs).as_bytes())?;
        Ok(())
    }
}

/// Hourly weather per (location index, variable), starting at 00:00 UTC of
/// the start date.
type Weather = BTreeMap<(usize, WeatherVariable), Vec<f64>>;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn variable_stream(loc: usize, var: WeatherVariable) -> u64 {
    let vi = WeatherVariable::ALL.iter().position(|v| *v == var).expect("listed variable") as u64;
    1 + loc as u64 * 64 + vi
}

/// Intermittent rain: a two-state Markov chain with exponential depths.
fn rain(rng: &mut ChaCha8Rng, n: usize, p_start: f64, p_stay: f64, mean_mm: f64) -> Vec<f64> {
    let depth = Exp::new(1.0 / mean_mm).expect("positive mean");
    let mut wet = false;
    (0..n)
        .map(|_| {
            wet = rng.gen::<f64>() < if wet { p_stay } else { p_start };
            if wet {
                rng.sample(depth)
            } else {
                0.0
            }
        })
        .collect()
}

/// Seasonal and diurnal sinusoids plus AR(1) noise, clamped to `[lo, hi]`.
#[allow(clippy::too_many_arguments)]
fn smooth(
    rng: &mut ChaCha8Rng,
    n: usize,
    day0: f64,
    level: f64,
    seasonal: f64,
    diurnal: f64,
    noise_sd: f64,
    lo: f64,
    hi: f64,
) -> Vec<f64> {
    let phase = rng.gen::<f64>() * std::f64::consts::TAU;
    let mut e = 0.0;
    let innovation = noise_sd * (1.0f64 - 0.9 * 0.9).sqrt();
    (0..n)
        .map(|h| {
            let z: f64 = rng.sample(StandardNormal);
            e = 0.9 * e + innovation * z;
            let day = day0 + h as f64 / 24.0;
            let season = (std::f64::consts::TAU * day / 365.25 + phase).sin();
            let hour = (std::f64::consts::TAU * ((h % 24) as f64 - 9.0) / 24.0).sin();
            (level + seasonal * season + diurnal * hour + e).clamp(lo, hi)
        })
        .collect()
}

fn generate_weather(cfg: &SynthConfig) -> Weather {
    use WeatherVariable::*;
    let n = cfg.n_hours();
    let day0 = f64::from(chrono::Datelike::ordinal0(&cfg.start_date));
    let mut out = Weather::new();
    for loc in 0..cfg.n_locations {
        let median = rain(&mut rng_for(cfg.seed, variable_stream(loc, PrecipMedian)), n, 0.08, 0.6, 1.0);
        for &var in &cfg.variables {
            let mut rng = rng_for(cfg.seed, variable_stream(loc, var));
            let series = match var {
                PrecipMedian => median.clone(),
                PrecipP20 | PrecipP80 => {
                    let (scale, mean) = if var == PrecipP20 { (0.3, 0.4) } else { (0.3, 1.5) };
                    let own = rain(&mut rng, n, 0.08, 0.6, mean);
                    median.iter().zip(own).map(|(m, o)| scale * m + o).collect()
                }
                Temperature => smooth(&mut rng, n, day0, 10.0, 7.0, 3.0, 1.5, -15.0, 35.0),
                DewPoint => smooth(&mut rng, n, day0, 6.0, 5.0, 1.0, 1.5, -20.0, 25.0),
                Humidity => smooth(&mut rng, n, day0, 80.0, 8.0, -10.0, 6.0, 20.0, 100.0),
                Pressure => smooth(&mut rng, n, day0, 1012.0, 3.0, 0.5, 8.0, 950.0, 1050.0),
                WindSpeed => smooth(&mut rng, n, day0, 5.0, 1.5, 1.0, 2.5, 0.0, 40.0),
                WindDirection => smooth(&mut rng, n, day0, 220.0, 20.0, 0.0, 60.0, 0.0, 359.9),
                Cloudiness | CloudHigh | CloudLow | CloudMedium => {
                    smooth(&mut rng, n, day0, 60.0, 10.0, 5.0, 30.0, 0.0, 100.0)
                }
                GlobalRadiation => smooth(&mut rng, n, day0, 150.0, 80.0, 250.0, 60.0, 0.0, 1000.0),
            };
            out.insert((loc, var), series);
        }
    }
    out
}

/// Window 00:00–24:00 UTC of `day`, reduced like the default mining window.
fn daily_aggregate(series: &[f64], var: WeatherVariable, day: usize) -> f64 {
    let hours = &series[day * 24..day * 24 + 24];
    let mut sum = 0.0;
    for v in hours {
        sum += v;
    }
    match Reducer::default_for(var) {
        Reducer::Sum => sum,
        Reducer::Mean => sum / 24.0,
    }
}

fn sample_days(cfg: &SynthConfig, site: usize) -> Vec<usize> {
    let mut days: Vec<usize> = (0..cfg.n_days).collect();
    days.shuffle(&mut rng_for(cfg.seed, (1 << 32) + site as u64));
    days.truncate(cfg.samples_per_site.min(cfg.n_days));
    days.sort_unstable();
    days
}

/// Noise level that gives a linear link the requested population
/// correlation with its driver, using the driver's spread on the sampled
/// days.
pub fn noise_sd_for_correlation(cfg: &SynthConfig, link: &PlantedLink, target_r: f64) -> Result<f64> {
    if !(target_r > 0.0 && target_r <= 1.0) {
        return Err(Error::InvalidParameter(format!("target correlation {target_r} outside (0, 1]")));
    }
    let mut probe = cfg.clone();
    probe.variables = vec![link.weather_var];
    probe.planted_links.clear();
    probe.gauges.clear();
    probe.validate()?;
    let weather = generate_weather(&probe);
    let series = &weather[&(link.location, link.weather_var)];
    let aggs: Vec<f64> = sample_days(cfg, link.site)
        .into_iter()
        .map(|d| daily_aggregate(series, link.weather_var, d))
        .collect();
    let sd = crate::stats::z_normalize(&aggs)?.std;
    Ok(link.slope.abs() * sd * (1.0 / (target_r * target_r) - 1.0).sqrt())
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let weather = generate_weather(cfg);
    let locations: Vec<String> = (0..cfg.n_locations).map(location_id).collect();
    let sites: Vec<String> = (0..cfg.n_sites).map(site_id).collect();
    let start = cfg.start_hour();

    let documents = (0..cfg.n_days)
        .map(|d| {
            let run = start.offset(d as i64 * 24);
            let mut records = Vec::new();
            for ((loc, var), series) in &weather {
                for h in 0..24 {
                    records.push(ForecastRecord {
                        location: locations[*loc].clone(),
                        variable: *var,
                        hour: run.offset(h),
                        value: series[d * 24 + h as usize],
                    });
                }
            }
            ForecastDocument { run_time: run.to_datetime(), records }
        })
        .collect();

    let mut samples = Vec::new();
    for site in 0..cfg.n_sites {
        let links: Vec<&PlantedLink> = cfg.planted_links.iter().filter(|l| l.site == site).collect();
        for (ai, analyte) in [Analyte::Ecoli, Analyte::Enterococci].into_iter().enumerate() {
            let mut rng = rng_for(cfg.seed, (2 << 32) + (site as u64) * 2 + ai as u64);
            for day in sample_days(cfg, site) {
                let count = if links.is_empty() {
                    let z: f64 = rng.sample(StandardNormal);
                    cfg.baseline * (0.5 * z).exp()
                } else {
                    let mut signal = 0.0;
                    let mut noise = 0.0;
                    for l in &links {
                        let agg = daily_aggregate(&weather[&(l.location, l.weather_var)], l.weather_var, day);
                        let z: f64 = rng.sample(StandardNormal);
                        signal += l.slope * agg;
                        noise += l.noise_sd * z;
                    }
                    match links[0].transform {
                        LinkTransform::Linear => (cfg.baseline + signal + noise).max(0.0),
                        LinkTransform::Exponential => cfg.baseline * (signal + noise).exp(),
                    }
                };
                samples.push(WaterSample {
                    site_id: sites[site].clone(),
                    date: cfg.start_date + Duration::days(day as i64),
                    analyte,
                    count,
                });
            }
        }
    }

    let mut gauges = Vec::new();
    let mut pairs = Vec::new();
    for (gi, plan) in cfg.gauges.iter().enumerate() {
        let series = &weather[&(plan.location, plan.variable)];
        let mut readings = Vec::new();
        for h in 0..cfg.n_hours() as i64 {
            let src = h - plan.lag_hours;
            if src < 0 || src >= series.len() as i64 {
                continue;
            }
            let depth = series[src as usize];
            let t0 = start.offset(h).to_datetime();
            for q in 0..4 {
                readings.push(GaugeReading { timestamp: t0 + Duration::minutes(15 * q), depth_mm: depth / 4.0 });
            }
        }
        gauges.push(GaugeSeries::new(gauge_id(gi), readings)?);
        pairs.push((gauge_id(gi), locations[plan.location].clone()));
    }

    Ok(SynthOutput { locations, sites, documents, samples, gauges, pairs })
}
