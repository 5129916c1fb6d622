//! Neutral on-disk formats and the forecast polling loop.
//!
//! Forecast document (JSON lines, UTF-8, LF):
//!
//! ```text
//! {"run_time":"2021-06-01T00:00:00Z"}
//! {"loc":"L1","var":"temperature","t":"2021-06-01T03:00:00Z","v":11.5}
//! ```
//!
//! Gauge CSV: `gauge_id,timestamp,depth_mm`. Sample CSV:
//! `site_id,date,analyte,count`.
//!
//! Every parser salvages what it can: a bad record is rejected with a
//! diagnostic and the rest of the input is still read.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::RwLock;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::timeseries::{
    is_quarter_hour, Analyte, ForecastRecord, ForecastStore, GaugeReading, GaugeSeries, HourStamp,
    UpsertReport, WaterSample, WeatherVariable,
};
use crate::util::{format_utc, parse_utc, write_atomic};
use crate::{Error, Result};

pub const GAUGE_HEADER: [&str; 3] = ["gauge_id", "timestamp", "depth_mm"];
pub const SAMPLE_HEADER: [&str; 4] = ["site_id", "date", "analyte", "count"];
pub const PAIRS_HEADER: [&str; 2] = ["gauge_id", "location"];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// 1-based line number in the source.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records_accepted: usize,
    pub records_rejected: usize,
    pub diagnostics: Vec<Diagnostic>,
}

impl IngestReport {
    fn accept(&mut self) {
        self.records_accepted += 1;
    }

    fn reject(&mut self, line: usize, message: impl Into<String>) {
        self.records_rejected += 1;
        self.diagnostics.push(Diagnostic {
            line,
            message: message.into(),
        });
    }

    pub fn total(&self) -> usize {
        self.records_accepted + self.records_rejected
    }

    pub fn merge(&mut self, other: IngestReport) {
        self.records_accepted += other.records_accepted;
        self.records_rejected += other.records_rejected;
        self.diagnostics.extend(other.diagnostics);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDocument {
    pub run_time: DateTime<Utc>,
    pub records: Vec<ForecastRecord>,
}

#[derive(Deserialize)]
struct HeaderLine {
    run_time: String,
}

#[derive(Serialize, Deserialize)]
struct RecordLine<'a> {
    loc: std::borrow::Cow<'a, str>,
    var: std::borrow::Cow<'a, str>,
    t: std::borrow::Cow<'a, str>,
    v: f64,
}

fn lines(bytes: &[u8]) -> impl Iterator<Item = (usize, &[u8])> {
    bytes
        .split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix(b"\r").unwrap_or(l)))
        .filter(|(_, l)| !l.iter().all(u8::is_ascii_whitespace))
}

/// Parses a forecast document. Only a missing or malformed header line
/// fails the whole document.
pub fn parse_forecast_document(bytes: &[u8]) -> Result<(ForecastDocument, IngestReport)> {
    let mut it = lines(bytes);
    let (header_line, header) = it
        .next()
        .ok_or_else(|| Error::Parse("forecast document is empty; expected run_time header".into()))?;
    let run_time = std::str::from_utf8(header)
        .ok()
        .and_then(|s| serde_json::from_str::<HeaderLine>(s).ok())
        .and_then(|h| parse_utc(&h.run_time))
        .ok_or_else(|| {
            Error::Parse(format!(
                "line {header_line}: expected {{\"run_time\":\"<ISO8601 UTC>\"}} header"
            ))
        })?;

    let mut report = IngestReport::default();
    let mut records = Vec::new();
    for (line, raw) in it {
        match parse_record_line(raw) {
            Ok(rec) => {
                records.push(rec);
                report.accept();
            }
            Err(msg) => report.reject(line, msg),
        }
    }
    Ok((ForecastDocument { run_time, records }, report))
}

fn parse_record_line(raw: &[u8]) -> std::result::Result<ForecastRecord, String> {
    let text = std::str::from_utf8(raw).map_err(|_| "invalid UTF-8".to_string())?;
    let line: RecordLine = serde_json::from_str(text).map_err(|e| format!("malformed record: {e}"))?;
    let variable: WeatherVariable = line.var.parse().map_err(|e: Error| e.to_string())?;
    let t = parse_utc(&line.t).ok_or_else(|| format!("bad timestamp `{}`", line.t))?;
    let hour = HourStamp::from_datetime(t).ok_or_else(|| format!("timestamp `{}` is not a whole hour", line.t))?;
    if !line.v.is_finite() {
        return Err("non-finite value".into());
    }
    if line.loc.is_empty() {
        return Err("empty location id".into());
    }
    Ok(ForecastRecord {
        location: line.loc.into_owned(),
        variable,
        hour,
        value: line.v,
    })
}

pub fn write_forecast_document(doc: &ForecastDocument) -> String {
    let mut out = format!(
        "{}\n",
        serde_json::json!({ "run_time": format_utc(doc.run_time) })
    );
    for r in &doc.records {
        let line = RecordLine {
            loc: r.location.as_str().into(),
            var: r.variable.token().into(),
            t: format_utc(r.hour.to_datetime()).into(),
            v: r.value,
        };
        out.push_str(&serde_json::to_string(&line).expect("record serialises"));
        out.push('\n');
    }
    out
}

/// Parses gauge CSV rows into per-gauge series sorted by gauge id.
/// Rows are sorted by time within a gauge; a repeated (gauge, timestamp)
/// keeps the first occurrence.
pub fn parse_gauge_csv(bytes: &[u8]) -> Result<(Vec<GaugeSeries>, IngestReport)> {
    let mut rdr = csv_reader(bytes);
    check_header(&mut rdr, &GAUGE_HEADER)?;
    let mut report = IngestReport::default();
    let mut seen: HashSet<(String, DateTime<Utc>)> = HashSet::new();
    let mut grouped: BTreeMap<String, Vec<GaugeReading>> = BTreeMap::new();
    for (line, row) in csv_rows(&mut rdr) {
        let parsed = row.and_then(|fields| {
            let [id, ts, depth] = fields_exact::<3>(&fields)?;
            let t = parse_utc(ts).ok_or_else(|| format!("bad timestamp `{ts}`"))?;
            if !is_quarter_hour(t) {
                return Err(format!("timestamp `{ts}` not on a 15-minute boundary"));
            }
            let d: f64 = depth.trim().parse().map_err(|_| format!("bad depth `{depth}`"))?;
            if !d.is_finite() {
                return Err("non-finite depth".into());
            }
            if d < 0.0 {
                return Err(format!("negative depth {d}"));
            }
            if id.trim().is_empty() {
                return Err("empty gauge id".into());
            }
            Ok((id.trim().to_string(), t, d))
        });
        match parsed {
            Ok((id, t, d)) => {
                if !seen.insert((id.clone(), t)) {
                    report.reject(line, format!("duplicate reading for gauge `{id}` at {}", format_utc(t)));
                    continue;
                }
                grouped.entry(id).or_default().push(GaugeReading { timestamp: t, depth_mm: d });
                report.accept();
            }
            Err(msg) => report.reject(line, msg),
        }
    }
    let series = grouped
        .into_iter()
        .map(|(id, mut rs)| {
            rs.sort_by_key(|r| r.timestamp);
            GaugeSeries::new(id, rs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((series, report))
}

pub fn write_gauge_csv(series: &[GaugeSeries]) -> String {
    let mut out = GAUGE_HEADER.join(",") + "\n";
    for s in series {
        for r in s.readings() {
            out.push_str(&format!("{},{},{}\n", s.gauge_id, format_utc(r.timestamp), r.depth_mm));
        }
    }
    out
}

/// Parses sample CSV rows. A repeated (site, date, analyte) keeps the
/// first occurrence.
pub fn parse_samples_csv(bytes: &[u8]) -> Result<(Vec<WaterSample>, IngestReport)> {
    let mut rdr = csv_reader(bytes);
    check_header(&mut rdr, &SAMPLE_HEADER)?;
    let mut report = IngestReport::default();
    let mut seen: HashSet<(String, NaiveDate, Analyte)> = HashSet::new();
    let mut out = Vec::new();
    for (line, row) in csv_rows(&mut rdr) {
        let parsed = row.and_then(|fields| {
            let [site, date, analyte, count] = fields_exact::<4>(&fields)?;
            let site = site.trim();
            if site.is_empty() {
                return Err("empty site id".into());
            }
            let date = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d")
                .map_err(|_| format!("bad date `{date}`"))?;
            let analyte: Analyte = analyte.parse().map_err(|e: Error| e.to_string())?;
            let count: f64 = count.trim().parse().map_err(|_| format!("bad count `{count}`"))?;
            if !count.is_finite() {
                return Err("non-finite count".into());
            }
            if count < 0.0 {
                return Err(format!("negative count {count}"));
            }
            Ok(WaterSample {
                site_id: site.to_string(),
                date,
                analyte,
                count,
            })
        });
        match parsed {
            Ok(s) => {
                if !seen.insert((s.site_id.clone(), s.date, s.analyte)) {
                    report.reject(line, format!("duplicate {} result for `{}` on {}", s.analyte, s.site_id, s.date));
                    continue;
                }
                out.push(s);
                report.accept();
            }
            Err(msg) => report.reject(line, msg),
        }
    }
    Ok((out, report))
}

pub fn write_samples_csv(samples: &[WaterSample]) -> String {
    let mut out = SAMPLE_HEADER.join(",") + "\n";
    for s in samples {
        out.push_str(&format!("{},{},{},{}\n", s.site_id, s.date.format("%Y-%m-%d"), s.analyte, s.count));
    }
    out
}

/// Parses the gauge → forecast location mapping. A gauge listed twice
/// keeps its first location.
pub fn parse_pairs_csv(bytes: &[u8]) -> Result<(Vec<(String, String)>, IngestReport)> {
    let mut rdr = csv_reader(bytes);
    check_header(&mut rdr, &PAIRS_HEADER)?;
    let mut report = IngestReport::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for (line, row) in csv_rows(&mut rdr) {
        let parsed = row.and_then(|fields| {
            let [gauge, loc] = fields_exact::<2>(&fields)?;
            if gauge.is_empty() || loc.is_empty() {
                return Err("empty gauge id or location".into());
            }
            Ok((gauge.to_string(), loc.to_string()))
        });
        match parsed {
            Ok((g, l)) if !seen.insert(g.clone()) => report.reject(line, format!("gauge `{g}` listed twice (`{l}` ignored)")),
            Ok(pair) => {
                out.push(pair);
                report.accept();
            }
            Err(msg) => report.reject(line, msg),
        }
    }
    Ok((out, report))
}

pub fn write_pairs_csv(pairs: &[(String, String)]) -> String {
    let mut out = PAIRS_HEADER.join(",") + "\n";
    for (g, l) in pairs {
        out.push_str(&format!("{g},{l}\n"));
    }
    out
}

fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes)
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let mut rec = csv::ByteRecord::new();
    let ok = rdr.read_byte_record(&mut rec).map_err(|e| Error::Parse(e.to_string()))?;
    let got: Vec<String> = rec.iter().map(|f| String::from_utf8_lossy(f).into_owned()).collect();
    if !ok || got.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(Error::Parse(format!(
            "expected CSV header `{}`, found `{}`",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

type RowResult = std::result::Result<Vec<String>, String>;

fn csv_rows<R: std::io::Read>(rdr: &mut csv::Reader<R>) -> impl Iterator<Item = (usize, RowResult)> + '_ {
    let mut rec = csv::ByteRecord::new();
    let mut fallback_line = 1usize;
    std::iter::from_fn(move || loop {
        fallback_line += 1;
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => return None,
            Ok(true) => {
                let line = rec.position().map(|p| p.line() as usize).unwrap_or(fallback_line);
                if rec.iter().all(|f| f.is_empty()) {
                    continue;
                }
                let fields = rec
                    .iter()
                    .map(|f| std::str::from_utf8(f).map(str::to_string))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| "invalid UTF-8".to_string());
                return Some((line, fields));
            }
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(fallback_line);
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return None;
                }
                return Some((line, Err(e.to_string())));
            }
        }
    })
}

fn fields_exact<const N: usize>(fields: &[String]) -> std::result::Result<[&str; N], String> {
    if fields.len() != N {
        return Err(format!("expected {N} fields, found {}", fields.len()));
    }
    Ok(std::array::from_fn(|i| fields[i].as_str()))
}

// ---------------------------------------------------------------------------
// File-backed store directory

const FORECAST_DIR: &str = "forecasts";
pub const STORE_SAMPLES: &str = "samples.csv";
pub const STORE_GAUGES: &str = "gauges.csv";

pub fn run_file_name(run_time: DateTime<Utc>) -> String {
    format!("run-{}.jsonl", run_time.format("%Y%m%dT%H%M%SZ"))
}

/// Directory holding forecast documents of a persisted store: `<dir>/forecasts`
/// when it exists, otherwise `dir` itself.
pub fn forecast_dir(dir: &Path) -> PathBuf {
    let sub = dir.join(FORECAST_DIR);
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

/// Loads every `*.jsonl` forecast document found in the store directory.
pub fn load_store(dir: &Path) -> Result<(ForecastStore, IngestReport)> {
    let mut store = ForecastStore::new();
    let mut report = IngestReport::default();
    if !dir.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("store directory {} not found", dir.display()),
        )));
    }
    let fdir = forecast_dir(dir);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&fdir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    for p in paths {
        let bytes = std::fs::read(&p)?;
        let (doc, r) = parse_forecast_document(&bytes)
            .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
        report.merge(r);
        let up = store.upsert(&doc.records, doc.run_time);
        for msg in up.rejected {
            report.diagnostics.push(Diagnostic { line: 0, message: format!("{}: {msg}", p.display()) });
        }
    }
    Ok((store, report))
}

/// Persists the store as one forecast document per model run. Documents for
/// runs that no longer own any key are removed.
pub fn save_store(store: &ForecastStore, dir: &Path) -> Result<()> {
    let fdir = dir.join(FORECAST_DIR);
    std::fs::create_dir_all(&fdir)?;
    let snapshots = store.snapshots();
    let keep: HashSet<String> = snapshots.keys().map(|t| run_file_name(*t)).collect();
    for (run_time, records) in snapshots {
        let doc = ForecastDocument { run_time, records };
        write_atomic(&fdir.join(run_file_name(run_time)), write_forecast_document(&doc).as_bytes())?;
    }
    for entry in std::fs::read_dir(&fdir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if name.starts_with("run-") && name.ends_with(".jsonl") && !keep.contains(&name) {
            std::fs::remove_file(path)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Polling

/// Configuration for the forecast poller, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollConfig {
    /// URL or path template; `{location}` is replaced per tracked location.
    pub endpoint_template: String,
    /// Text file with one location id per line.
    pub locations_file: PathBuf,
    #[serde(default = "default_interval")]
    pub interval_hours: f64,
}

fn default_interval() -> f64 {
    6.0
}

impl PollConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PollConfig = toml::from_str(text).map_err(|e| Error::Parse(format!("poll config: {e}")))?;
        if !(cfg.interval_hours > 0.0) {
            return Err(Error::InvalidParameter("interval_hours must be positive".into()));
        }
        if !cfg.endpoint_template.contains("{location}") {
            return Err(Error::InvalidParameter("endpoint_template needs a {location} placeholder".into()));
        }
        Ok(cfg)
    }

    pub fn url_for(&self, location: &str) -> String {
        self.endpoint_template.replace("{location}", location)
    }

    pub fn cycles_per_day(&self) -> f64 {
        24.0 / self.interval_hours
    }

    pub fn interval(&self) -> StdDuration {
        StdDuration::from_secs_f64(self.interval_hours * 3600.0)
    }

    /// Cycle start times in `[start, end)`.
    pub fn schedule(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> Vec<DateTime<Utc>> {
        let step = Duration::milliseconds((self.interval_hours * 3_600_000.0).round() as i64);
        let mut out = Vec::new();
        let mut t = start;
        while t < end {
            out.push(t);
            t += step;
        }
        out
    }
}

pub fn read_locations(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Retrieves the raw bytes of a forecast document.
pub trait FetchAdapter {
    fn fetch(&self, url: &str) -> Result<Vec<u8>>;
}

/// Reads documents from the local filesystem; accepts `file://` URLs.
#[derive(Debug, Clone, Copy, Default)]
pub struct FileFetcher;

impl FetchAdapter for FileFetcher {
    fn fetch(&self, url: &str) -> Result<Vec<u8>> {
        let path = url.strip_prefix("file://").unwrap_or(url);
        std::fs::read(path).map_err(|e| Error::Fetch(format!("{path}: {e}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CycleReport {
    pub upserts: usize,
    pub upsert: UpsertReport,
    pub ingest: IngestReport,
    /// (location, message) for every location that failed this cycle.
    pub failures: Vec<(String, String)>,
}

pub struct Poller<F> {
    pub config: PollConfig,
    pub locations: Vec<String>,
    fetcher: F,
}

impl<F: FetchAdapter> Poller<F> {
    pub fn new(config: PollConfig, locations: Vec<String>, fetcher: F) -> Self {
        Poller { config, locations, fetcher }
    }

    /// Fetches, parses and upserts every tracked location once. A failing
    /// location is logged and skipped.
    pub fn run_cycle(&self, store: &RwLock<ForecastStore>) -> CycleReport {
        let mut report = CycleReport::default();
        for loc in &self.locations {
            let url = self.config.url_for(loc);
            let fetched = self
                .fetcher
                .fetch(&url)
                .and_then(|bytes| parse_forecast_document(&bytes));
            match fetched {
                Ok((doc, ingest)) => {
                    let up = {
                        let mut guard = store.write().unwrap_or_else(|p| p.into_inner());
                        guard.upsert(&doc.records, doc.run_time)
                    };
                    report.upserts += 1;
                    report.upsert.written += up.written;
                    report.upsert.stale += up.stale;
                    report.upsert.rejected.extend(up.rejected);
                    report.ingest.merge(ingest);
                }
                Err(e) => {
                    log::warn!("poll: location {loc} failed: {e}");
                    report.failures.push((loc.clone(), e.to_string()));
                }
            }
        }
        report
    }

    /// Runs cycles forever, or `max_cycles` times, sleeping the configured
    /// interval between them. `after_cycle` sees the store after each cycle.
    pub fn run<C>(&self, store: &RwLock<ForecastStore>, max_cycles: Option<usize>, mut after_cycle: C)
    where
        C: FnMut(usize, &CycleReport, &RwLock<ForecastStore>),
    {
        let mut cycle = 0usize;
        loop {
            let report = self.run_cycle(store);
            after_cycle(cycle, &report, store);
            cycle += 1;
            if max_cycles.is_some_and(|m| cycle >= m) {
                break;
            }
            std::thread::sleep(self.config.interval());
        }
    }
}
