//! `aquamine`: ingest forecasts and samples, mine features, train and
//! explain models, and measure gauge lags from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::RwLock;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use aquamine_core::ingest::{
    load_store, parse_forecast_document, parse_gauge_csv, parse_pairs_csv, parse_samples_csv, read_locations,
    save_store, write_gauge_csv, write_pairs_csv, write_samples_csv, IngestReport, PollConfig, Poller, STORE_GAUGES,
    STORE_SAMPLES,
};
use aquamine_core::mining::{assemble_dataset, select_features, BestFeatureMap, DatasetOptions, MiningConfig, WqVar};
use aquamine_core::models::{ModelKind, TrainConfig};
use aquamine_core::pipeline::{
    beeswarm_csv, explain_model, partial_dependence_csv, tlcc_report, to_json, train_models, BackgroundSource,
    ExplainConfig, ModelBundle,
};
use aquamine_core::synth::{noise_sd_for_correlation, synth_generate, GaugePlan, SynthConfig};
use aquamine_core::util::write_atomic;
use aquamine_core::{Dataset, ForecastStore, GaugeSeries, WaterSample, WeatherVariable};

mod fetch;

const STORE_PAIRS: &str = "pairs.csv";

#[derive(Parser)]
#[command(name = "aquamine", version, about = "Weather-feature mining and explainable models for bathing-water bacteria")]
struct Cli {
    /// File-backed store directory.
    #[arg(long, global = true, default_value = "store")]
    store: PathBuf,
    /// Log progress and every ingest diagnostic.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add forecast documents, samples, gauges and gauge pairs to the store.
    Ingest(IngestArgs),
    /// Poll a forecast endpoint on a fixed interval.
    Poll(PollArgs),
    /// Search for the best forecast location per site and variable.
    Mine(MineArgs),
    /// Train and evaluate regression models for one site and target.
    Train(TrainArgs),
    /// Shapley values and partial dependence for a trained model.
    Explain(ExplainArgs),
    /// Lagged correlation between forecast precipitation and rain gauges.
    Tlcc(TlccArgs),
    /// Write a seeded synthetic dataset with planted signals.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Forecast documents, or directories of `*.jsonl` documents.
    #[arg(long, num_args = 1..)]
    forecasts: Vec<PathBuf>,
    /// Sample CSV (`site_id,date,analyte,count`).
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Gauge CSV (`gauge_id,timestamp,depth_mm`).
    #[arg(long)]
    gauges: Option<PathBuf>,
    /// Gauge to forecast location CSV (`gauge_id,location`).
    #[arg(long)]
    pairs: Option<PathBuf>,
}

#[derive(Args)]
struct PollArgs {
    /// TOML with `endpoint_template`, `locations_file` and `interval_hours`.
    #[arg(long)]
    config: PathBuf,
    /// Stop after this many cycles.
    #[arg(long)]
    max_cycles: Option<usize>,
}

#[derive(Args)]
struct MineArgs {
    /// Sample CSV; defaults to the store's samples.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long, default_value = "features.json")]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Evaluate candidates on one thread.
    #[arg(long)]
    serial: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelChoice {
    Linear,
    Kridge,
    Gp,
    Mlp,
    All,
}

impl ModelChoice {
    fn kinds(self) -> Vec<ModelKind> {
        match self {
            ModelChoice::Linear => vec![ModelKind::Linear],
            ModelChoice::Kridge => vec![ModelKind::Kridge],
            ModelChoice::Gp => vec![ModelKind::Gp],
            ModelChoice::Mlp => vec![ModelKind::Mlp],
            ModelChoice::All => ModelKind::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Ecoli,
    Enterococci,
}

impl From<Target> for WqVar {
    fn from(t: Target) -> Self {
        match t {
            Target::Ecoli => WqVar::Ecoli,
            Target::Enterococci => WqVar::Enterococci,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "features.json")]
    features: PathBuf,
    /// Sample CSV; defaults to the store's samples.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long)]
    site: String,
    #[arg(long, value_enum)]
    target: Target,
    #[arg(long, value_enum, default_value = "all")]
    model: ModelChoice,
    /// Train on ln(count + 1).
    #[arg(long)]
    log_target: bool,
    #[arg(long, default_value_t = 42)]
    split_seed: u64,
    /// Only use features at this forecast location.
    #[arg(long)]
    location: Option<String>,
    /// Model bundle and report paths.
    #[arg(long, num_args = 2, value_names = ["MODEL_JSON", "REPORT_JSON"], default_values = ["model.json", "report.json"])]
    out: Vec<PathBuf>,
    /// Where to write the assembled dataset; defaults to `dataset.json`
    /// beside the model bundle.
    #[arg(long)]
    dataset_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Background {
    Train,
    All,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long, default_value = "model.json")]
    model: PathBuf,
    /// Dataset written by `train`.
    #[arg(long, default_value = "dataset.json")]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    background: Background,
    /// Subsample the background to this many rows.
    #[arg(long)]
    background_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Which model of the bundle to explain; defaults to the first.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long, default_value_t = 20)]
    grid: usize,
    /// Beeswarm and partial dependence CSV paths.
    #[arg(long, num_args = 2, value_names = ["SHAP_CSV", "PD_CSV"], default_values = ["shap.csv", "pd.csv"])]
    out: Vec<PathBuf>,
}

#[derive(Args)]
struct TlccArgs {
    /// Store directory or directory of forecast documents; defaults to the store.
    #[arg(long)]
    forecasts: Option<PathBuf>,
    /// Gauge CSV; defaults to the store's gauges.
    #[arg(long)]
    gauges: Option<PathBuf>,
    /// Gauge to location CSV; defaults to the store's pairs.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, default_value = "precip_p20")]
    variable: WeatherVariable,
    #[arg(long, default_value_t = 6)]
    max_lag: i64,
    #[arg(long, default_value = "tlcc.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    locations: usize,
    #[arg(long, default_value_t = 2)]
    sites: usize,
    #[arg(long, default_value_t = 150)]
    days: usize,
    #[arg(long, default_value_t = 120)]
    samples_per_site: usize,
    /// Gauge delay behind forecast precipitation, in hours.
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    gauge_lag: i64,
    /// Noise standard deviation of the planted link.
    #[arg(long, conflicts_with = "target_r")]
    noise_sd: Option<f64>,
    /// Choose the planted link's noise so its correlation is about this.
    #[arg(long, default_value_t = 0.7)]
    target_r: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_target(false)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(&cli.store, a).context("ingest"),
        Command::Poll(a) => poll(&cli.store, a).context("poll"),
        Command::Mine(a) => mine(&cli.store, a).context("mine"),
        Command::Train(a) => train(&cli.store, a).context("train"),
        Command::Explain(a) => explain(a).context("explain"),
        Command::Tlcc(a) => tlcc(&cli.store, a).context("tlcc"),
        Command::Synth(a) => synth(a).context("synth"),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    write_atomic(path, contents.as_bytes()).with_context(|| format!("cannot write {}", path.display()))
}

fn report_ingest(what: &str, report: &IngestReport) {
    log::info!("{what}: {} accepted, {} rejected", report.records_accepted, report.records_rejected);
    for d in &report.diagnostics {
        log::info!("{what}: line {}: {}", d.line, d.message);
    }
    if report.records_rejected > 0 {
        log::warn!("{what}: {} records rejected (use --verbose for details)", report.records_rejected);
    }
}

fn open_store(dir: &Path) -> Result<ForecastStore> {
    let (store, report) = load_store(dir).with_context(|| format!("cannot load store {}", dir.display()))?;
    report_ingest("store", &report);
    Ok(store)
}

fn load_samples(store: &Path, explicit: Option<&PathBuf>) -> Result<Vec<WaterSample>> {
    let path = explicit.cloned().unwrap_or_else(|| store.join(STORE_SAMPLES));
    let (samples, report) = parse_samples_csv(&read(&path)?).with_context(|| format!("in {}", path.display()))?;
    report_ingest(&path.display().to_string(), &report);
    Ok(samples)
}

fn load_gauges(path: &Path) -> Result<Vec<GaugeSeries>> {
    let (gauges, report) = parse_gauge_csv(&read(path)?).with_context(|| format!("in {}", path.display()))?;
    report_ingest(&path.display().to_string(), &report);
    Ok(gauges)
}

fn load_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let (pairs, report) = parse_pairs_csv(&read(path)?).with_context(|| format!("in {}", path.display()))?;
    report_ingest(&path.display().to_string(), &report);
    Ok(pairs)
}

fn forecast_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        if !path.exists() {
            bail!("cannot read {}: no such file or directory", path.display());
        }
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("cannot list {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

fn ingest(store_dir: &Path, a: &IngestArgs) -> Result<()> {
    if a.forecasts.is_empty() && a.samples.is_none() && a.gauges.is_none() && a.pairs.is_none() {
        bail!("nothing to ingest; pass --forecasts, --samples, --gauges or --pairs");
    }
    std::fs::create_dir_all(store_dir).with_context(|| format!("cannot create {}", store_dir.display()))?;
    if !a.forecasts.is_empty() {
        let mut store = open_store(store_dir)?;
        let (mut written, mut stale) = (0, 0);
        for root in &a.forecasts {
            for file in forecast_files(root)? {
                let (doc, report) =
                    parse_forecast_document(&read(&file)?).with_context(|| format!("in {}", file.display()))?;
                report_ingest(&file.display().to_string(), &report);
                let up = store.upsert(&doc.records, doc.run_time);
                for msg in &up.rejected {
                    log::warn!("{}: {msg}", file.display());
                }
                written += up.written;
                stale += up.stale;
            }
        }
        save_store(&store, store_dir).with_context(|| format!("cannot save store {}", store_dir.display()))?;
        eprintln!("forecasts: {written} hourly values written, {stale} stale, store holds {}", store.len());
    }
    if let Some(p) = &a.samples {
        let existing = store_dir.join(STORE_SAMPLES);
        let mut bytes = if existing.exists() { read(&existing)? } else { Vec::new() };
        let new = read(p)?;
        // append the new rows below the stored ones; duplicates keep the stored row
        let body = if bytes.is_empty() { new } else { new.splitn(2, |b| *b == b'\n').nth(1).unwrap_or(&[]).to_vec() };
        bytes.extend_from_slice(&body);
        let (samples, report) = parse_samples_csv(&bytes).with_context(|| format!("in {}", p.display()))?;
        report_ingest(&p.display().to_string(), &report);
        write(&existing, &write_samples_csv(&samples))?;
        eprintln!("samples: {} stored", samples.len());
    }
    if let Some(p) = &a.gauges {
        let mut gauges = load_gauges(p)?;
        let existing = store_dir.join(STORE_GAUGES);
        if existing.exists() {
            let mut old = load_gauges(&existing)?;
            old.retain(|g| !gauges.iter().any(|n| n.gauge_id == g.gauge_id));
            gauges.extend(old);
            gauges.sort_by(|a, b| a.gauge_id.cmp(&b.gauge_id));
        }
        write(&existing, &write_gauge_csv(&gauges))?;
        eprintln!("gauges: {} series stored", gauges.len());
    }
    if let Some(p) = &a.pairs {
        let pairs = load_pairs(p)?;
        write(&store_dir.join(STORE_PAIRS), &write_pairs_csv(&pairs))?;
        eprintln!("pairs: {} stored", pairs.len());
    }
    Ok(())
}

fn poll(store_dir: &Path, a: &PollArgs) -> Result<()> {
    let cfg = PollConfig::from_toml(&read_text(&a.config)?).with_context(|| format!("in {}", a.config.display()))?;
    let loc_path = if cfg.locations_file.is_relative() {
        a.config.parent().unwrap_or(Path::new(".")).join(&cfg.locations_file)
    } else {
        cfg.locations_file.clone()
    };
    let locations = read_locations(&read_text(&loc_path)?);
    if locations.is_empty() {
        bail!("no locations listed in {}", loc_path.display());
    }
    std::fs::create_dir_all(store_dir).with_context(|| format!("cannot create {}", store_dir.display()))?;
    let store = RwLock::new(open_store(store_dir)?);
    let poller = Poller::new(cfg, locations, fetch::UrlFetcher::default());
    let mut save_error = None;
    poller.run(&store, a.max_cycles, |cycle, report, store| {
        eprintln!(
            "cycle {cycle}: {} documents, {} values written, {} stale, {} failed locations",
            report.upserts,
            report.upsert.written,
            report.upsert.stale,
            report.failures.len()
        );
        report_ingest("poll", &report.ingest);
        let guard = store.read().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = save_store(&guard, store_dir) {
            log::error!("cycle {cycle}: cannot save store: {e}");
            save_error = Some(e);
        }
    });
    match save_error {
        Some(e) => Err(e).with_context(|| format!("cannot save store {}", store_dir.display())),
        None => Ok(()),
    }
}

fn mine(store_dir: &Path, a: &MineArgs) -> Result<()> {
    let store = open_store(store_dir)?;
    let samples = load_samples(store_dir, a.samples.as_ref())?;
    let cfg = MiningConfig { alpha: a.alpha, parallel: !a.serial, ..MiningConfig::default() };
    let sel = select_features(&samples, &store, &cfg)?;
    for d in &sel.diagnostics {
        log::warn!("{d}");
    }
    write(&a.out, &sel.map.to_json())?;
    eprintln!("mine: {} significant features written to {}", sel.map.len(), a.out.display());
    Ok(())
}

fn train(store_dir: &Path, a: &TrainArgs) -> Result<()> {
    let map = BestFeatureMap::from_json(&read_text(&a.features)?, 0.05)
        .with_context(|| format!("in {}", a.features.display()))?;
    let store = open_store(store_dir)?;
    let samples = load_samples(store_dir, a.samples.as_ref())?;
    let opts = DatasetOptions { log_target: a.log_target, location: a.location.clone(), ..Default::default() };
    let dataset = assemble_dataset(&samples, &store, &map, &a.site, a.target.into(), &opts)?;
    log::info!("dataset: {} rows, features [{}]", dataset.n_rows(), dataset.feature_names.join(", "));
    let (bundle, report) = train_models(&dataset, &a.model.kinds(), a.split_seed, &TrainConfig::default())?;
    let (model_path, report_path) = (&a.out[0], &a.out[1]);
    let dataset_path = a
        .dataset_out
        .clone()
        .unwrap_or_else(|| model_path.with_file_name("dataset.json"));
    write(model_path, &to_json(&bundle)?)?;
    write(report_path, &to_json(&report)?)?;
    write(&dataset_path, &to_json(&dataset)?)?;
    for m in &report.models {
        eprintln!("{:<7} test RMSE {:.4}", m.model.to_string(), m.rmse_test);
    }
    eprintln!("{:<7} test RMSE {:.4}", "mean", report.baseline_rmse);
    Ok(())
}

fn explain(a: &ExplainArgs) -> Result<()> {
    let bundle: ModelBundle =
        serde_json::from_str(&read_text(&a.model)?).with_context(|| format!("in {}", a.model.display()))?;
    let dataset: Dataset =
        serde_json::from_str(&read_text(&a.data)?).with_context(|| format!("in {}", a.data.display()))?;
    let kind = a.kind.as_deref().map(str::parse).transpose()?;
    let model = bundle.model(kind)?;
    let cfg = ExplainConfig {
        background: match a.background {
            Background::Train => BackgroundSource::Train,
            Background::All => BackgroundSource::All,
        },
        background_size: a.background_size,
        seed: a.seed,
        grid_size: a.grid,
    };
    let ex = explain_model(model, &bundle.split, &dataset, &cfg)?;
    write(&a.out[0], &beeswarm_csv(&ex.beeswarm)?)?;
    write(&a.out[1], &partial_dependence_csv(&ex.partial_dependence)?)?;
    eprintln!("explain: {} model, {} SHAP records, {} curves", model.kind(), ex.beeswarm.len(), ex.partial_dependence.len());
    Ok(())
}

fn tlcc(store_dir: &Path, a: &TlccArgs) -> Result<()> {
    let store = open_store(a.forecasts.as_deref().unwrap_or(store_dir))?;
    let gauges = load_gauges(&a.gauges.clone().unwrap_or_else(|| store_dir.join(STORE_GAUGES)))?;
    let pairs = load_pairs(&a.pairs.clone().unwrap_or_else(|| store_dir.join(STORE_PAIRS)))?;
    let report = tlcc_report(&store, &gauges, &pairs, a.variable, a.max_lag)?;
    write(&a.out, &to_json(&report)?)?;
    for r in &report {
        eprintln!("{} vs {}: best lag {} h, r = {:.4}, n = {}", r.gauge_id, r.location, r.best_lag, r.best_r, r.n);
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let base = SynthConfig::default();
    let mut cfg = SynthConfig {
        seed: a.seed,
        n_locations: a.locations,
        n_sites: a.sites,
        n_days: a.days,
        samples_per_site: a.samples_per_site,
        gauges: vec![GaugePlan { lag_hours: a.gauge_lag, ..base.gauges[0] }],
        ..base
    };
    let link = cfg.planted_links[0];
    cfg.planted_links[0].noise_sd = match a.noise_sd {
        Some(sd) => sd,
        None => noise_sd_for_correlation(&cfg, &link, a.target_r)?,
    };
    let out = synth_generate(&cfg)?;
    out.write_dir(&a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    let l = cfg.planted_links[0];
    eprintln!(
        "synth: {} days, {} samples; planted {} ~ {}:{} (slope {}, noise sd {:.3}); gauge lag {} h",
        cfg.n_days,
        out.samples.len(),
        out.sites[l.site],
        out.locations[l.location],
        l.weather_var,
        l.slope,
        l.noise_sd,
        a.gauge_lag
    );
    Ok(())
}
