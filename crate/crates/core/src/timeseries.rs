//! Hourly forecast storage, rain-gauge series and laboratory sample records.
//!
//! All instants are UTC. A sample's calendar date covers 00:00 to 24:00 UTC.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SECONDS_PER_HOUR: i64 = 3600;
pub const DEFAULT_HORIZON_HOURS: i64 = 54;
pub const DEFAULT_MIN_COVERAGE: usize = 18;

/// A whole UTC hour, counted from the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HourStamp(pub i64);

impl HourStamp {
    /// Returns `None` unless `t` sits exactly on an hour boundary.
    pub fn from_datetime(t: DateTime<Utc>) -> Option<Self> {
        if t.minute() != 0 || t.second() != 0 || t.nanosecond() != 0 {
            return None;
        }
        Some(HourStamp(t.timestamp().div_euclid(SECONDS_PER_HOUR)))
    }

    /// The hour containing `t`.
    pub fn floor(t: DateTime<Utc>) -> Self {
        HourStamp(t.timestamp().div_euclid(SECONDS_PER_HOUR))
    }

    pub fn start_of_day(date: NaiveDate) -> Self {
        let t = Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"));
        HourStamp(t.timestamp() / SECONDS_PER_HOUR)
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_opt(self.0 * SECONDS_PER_HOUR, 0)
            .single()
            .expect("hour stamp within chrono range")
    }

    pub fn offset(self, hours: i64) -> Self {
        HourStamp(self.0 + hours)
    }
}

impl fmt::Display for HourStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::util::format_utc(self.to_datetime()))
    }
}

macro_rules! token_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $token)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn token(self) -> &'static str {
                match self { $($name::$variant => $token),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($token => Ok($name::$variant),)+
                    other => Err(Error::Parse(format!(
                        concat!("unknown ", stringify!($name), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

token_enum! {
    /// The closed set of tracked forecast variables. Declaration order is
    /// the lexicographic order of the tokens.
    WeatherVariable {
        CloudHigh => "cloud_high",
        CloudLow => "cloud_low",
        CloudMedium => "cloud_medium",
        Cloudiness => "cloudiness",
        DewPoint => "dew_point",
        GlobalRadiation => "global_radiation",
        Humidity => "humidity",
        PrecipMedian => "precip_median",
        PrecipP20 => "precip_p20",
        PrecipP80 => "precip_p80",
        Pressure => "pressure",
        Temperature => "temperature",
        WindDirection => "wind_direction",
        WindSpeed => "wind_speed",
    }
}

impl WeatherVariable {
    pub fn is_precipitation(self) -> bool {
        matches!(
            self,
            WeatherVariable::PrecipMedian | WeatherVariable::PrecipP20 | WeatherVariable::PrecipP80
        )
    }
}

token_enum! {
    /// Laboratory analytes recorded per water sample.
    Analyte {
        Ammonia => "ammonia",
        Cod => "cod",
        Conductivity => "conductivity",
        DissolvedOxygen => "dissolved_oxygen",
        Ecoli => "ecoli",
        Enterococci => "enterococci",
        Nitrate => "nitrate",
        Ph => "ph",
        Phosphorus => "phosphorus",
        SuspendedSolids => "suspended_solids",
        Temperature => "temperature",
        TotalBod => "total_bod",
        TotalOxidisedNitrogen => "total_oxidised_nitrogen",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastEntry {
    pub value: f64,
    pub run_time: DateTime<Utc>,
}

/// One value of a forecast snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub location: String,
    pub variable: WeatherVariable,
    pub hour: HourStamp,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpsertReport {
    pub written: usize,
    pub stale: usize,
    pub rejected: Vec<String>,
}

type SeriesKey = (String, WeatherVariable);

/// Hourly forecast values keyed by (location, variable, hour). Each key
/// keeps the value from the newest model run that wrote it.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastStore {
    entries: BTreeMap<(String, WeatherVariable, HourStamp), ForecastEntry>,
    series: BTreeSet<SeriesKey>,
    horizon_hours: i64,
}

impl Default for ForecastStore {
    fn default() -> Self {
        Self::with_horizon(DEFAULT_HORIZON_HOURS)
    }
}

impl ForecastStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_horizon(horizon_hours: i64) -> Self {
        ForecastStore {
            entries: BTreeMap::new(),
            series: BTreeSet::new(),
            horizon_hours,
        }
    }

    pub fn horizon_hours(&self) -> i64 {
        self.horizon_hours
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies a snapshot produced by the model run at `run_time`.
    ///
    /// Keys whose stored run is as new or newer are left alone. Records with
    /// a non-finite value or an hour past the forecast horizon are rejected
    /// individually.
    pub fn upsert(&mut self, snapshot: &[ForecastRecord], run_time: DateTime<Utc>) -> UpsertReport {
        let mut report = UpsertReport::default();
        let horizon_end = run_time + Duration::hours(self.horizon_hours);
        for (i, rec) in snapshot.iter().enumerate() {
            if !rec.value.is_finite() {
                report
                    .rejected
                    .push(format!("record {i}: non-finite value for {}", rec.location));
                continue;
            }
            if rec.hour.to_datetime() > horizon_end {
                report.rejected.push(format!(
                    "record {i}: hour {} beyond {} h horizon of run {}",
                    rec.hour,
                    self.horizon_hours,
                    crate::util::format_utc(run_time)
                ));
                continue;
            }
            let key = (rec.location.clone(), rec.variable, rec.hour);
            match self.entries.get_mut(&key) {
                Some(existing) if existing.run_time >= run_time => report.stale += 1,
                Some(existing) => {
                    *existing = ForecastEntry { value: rec.value, run_time };
                    report.written += 1;
                }
                None => {
                    self.series.insert((rec.location.clone(), rec.variable));
                    self.entries.insert(key, ForecastEntry { value: rec.value, run_time });
                    report.written += 1;
                }
            }
        }
        report
    }

    pub fn get(&self, location: &str, variable: WeatherVariable, hour: HourStamp) -> Option<ForecastEntry> {
        self.entries
            .get(&(location.to_string(), variable, hour))
            .copied()
    }

    pub fn has_series(&self, location: &str, variable: WeatherVariable) -> bool {
        self.series.contains(&(location.to_string(), variable))
    }

    /// Distinct location ids, sorted.
    pub fn locations(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (loc, _) in &self.series {
            if out.last() != Some(loc) {
                out.push(loc.clone());
            }
        }
        out
    }

    pub fn variables_for(&self, location: &str) -> Vec<WeatherVariable> {
        self.series
            .iter()
            .filter(|(l, _)| l == location)
            .map(|(_, v)| *v)
            .collect()
    }

    /// Stored values for one series in `[start, end)`, in hour order.
    pub fn range(
        &self,
        location: &str,
        variable: WeatherVariable,
        start: HourStamp,
        end: HourStamp,
    ) -> impl Iterator<Item = (HourStamp, ForecastEntry)> + '_ {
        let lo = (location.to_string(), variable, start);
        let hi = (location.to_string(), variable, end);
        self.entries.range(lo..hi).map(|((_, _, h), e)| (*h, *e))
    }

    /// The whole hourly series for one (location, variable).
    pub fn series(&self, location: &str, variable: WeatherVariable) -> BTreeMap<HourStamp, f64> {
        self.range(location, variable, HourStamp(i64::MIN), HourStamp(i64::MAX))
            .map(|(h, e)| (h, e.value))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, WeatherVariable, HourStamp, &ForecastEntry)> {
        self.entries
            .iter()
            .map(|((l, v, h), e)| (l.as_str(), *v, *h, e))
    }

    /// Splits the store into per-run snapshots, ordered by run time.
    pub fn snapshots(&self) -> BTreeMap<DateTime<Utc>, Vec<ForecastRecord>> {
        let mut out: BTreeMap<DateTime<Utc>, Vec<ForecastRecord>> = BTreeMap::new();
        for ((loc, var, hour), e) in &self.entries {
            out.entry(e.run_time).or_default().push(ForecastRecord {
                location: loc.clone(),
                variable: *var,
                hour: *hour,
                value: e.value,
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    Sum,
    Mean,
}

impl Reducer {
    pub fn default_for(variable: WeatherVariable) -> Self {
        if variable.is_precipitation() {
            Reducer::Sum
        } else {
            Reducer::Mean
        }
    }
}

/// Which hours around a sample date are reduced into one feature value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Window start relative to 00:00 UTC of the sample date.
    pub offset_hours: i64,
    pub length_hours: i64,
    /// `None` selects sum for precipitation and mean otherwise.
    pub reducer: Option<Reducer>,
    pub min_coverage: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            offset_hours: 0,
            length_hours: 24,
            reducer: None,
            min_coverage: DEFAULT_MIN_COVERAGE,
        }
    }
}

/// Reduces the stored hours of one series over the window for `date`.
///
/// `Ok(None)` means the window has fewer than `min_coverage` stored hours.
pub fn window_aggregate(
    store: &ForecastStore,
    location: &str,
    variable: WeatherVariable,
    date: NaiveDate,
    spec: &WindowSpec,
) -> Result<Option<f64>> {
    if !store.has_series(location, variable) {
        return Err(Error::UnknownSeries {
            location: location.to_string(),
            variable: variable.token().to_string(),
        });
    }
    let start = HourStamp::start_of_day(date).offset(spec.offset_hours);
    let end = start.offset(spec.length_hours);
    let mut count = 0usize;
    let mut sum = 0.0;
    for (_, e) in store.range(location, variable, start, end) {
        count += 1;
        sum += e.value;
    }
    if count < spec.min_coverage || count == 0 {
        return Ok(None);
    }
    let reducer = spec.reducer.unwrap_or_else(|| Reducer::default_for(variable));
    Ok(Some(match reducer {
        Reducer::Sum => sum,
        Reducer::Mean => sum / count as f64,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeReading {
    pub timestamp: DateTime<Utc>,
    pub depth_mm: f64,
}

/// Quarter-hourly rain-gauge depths for one gauge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeSeries {
    pub gauge_id: String,
    readings: Vec<GaugeReading>,
}

pub fn is_quarter_hour(t: DateTime<Utc>) -> bool {
    t.minute().is_multiple_of(15) && t.second() == 0 && t.nanosecond() == 0
}

impl GaugeSeries {
    /// Validates ordering, alignment and non-negativity.
    pub fn new(gauge_id: impl Into<String>, readings: Vec<GaugeReading>) -> Result<Self> {
        for (i, r) in readings.iter().enumerate() {
            if !is_quarter_hour(r.timestamp) {
                return Err(Error::Parse(format!("reading {i}: not on a 15-minute boundary")));
            }
            if !(r.depth_mm >= 0.0) || !r.depth_mm.is_finite() {
                return Err(Error::NegativeValue { index: i, value: r.depth_mm });
            }
            if i > 0 && readings[i - 1].timestamp >= r.timestamp {
                return Err(Error::Parse(format!("reading {i}: timestamps not strictly increasing")));
            }
        }
        Ok(GaugeSeries {
            gauge_id: gauge_id.into(),
            readings,
        })
    }

    pub fn readings(&self) -> &[GaugeReading] {
        &self.readings
    }
}

/// Sums quarter-hour depths into hourly totals. Hours without any reading
/// are omitted.
pub fn aggregate_gauge_to_hourly(series: &GaugeSeries) -> Vec<(HourStamp, f64)> {
    let mut out: Vec<(HourStamp, f64)> = Vec::new();
    for r in &series.readings {
        let hour = HourStamp::floor(r.timestamp);
        match out.last_mut() {
            Some((h, total)) if *h == hour => *total += r.depth_mm,
            _ => out.push((hour, r.depth_mm)),
        }
    }
    out
}

/// One laboratory result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterSample {
    pub site_id: String,
    pub date: NaiveDate,
    pub analyte: Analyte,
    pub count: f64,
}
