mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use autoscale_core::autoscaler::{self, ClusterSnapshot, PlacementGroupSet};
use autoscale_core::forecast::arma::DifferencedArma;
use autoscale_core::forecast::holt_winters::{HoltWinters, HoltWintersParams};
use autoscale_core::forecast::saved::SavedModel;
use autoscale_core::forecast::static_max::StaticMax;
use autoscale_core::forecast::transformer::{attention_csv, TransformerConfig, TransformerForecaster};
use autoscale_core::forecast::{Forecaster, Matrix};
use autoscale_core::resources::{embed_requirements, select_base_instance, BucketCatalog};
use autoscale_core::sim::{self, ComparisonEntry, Policy, SimConfig, SimInput, SimReport};
use autoscale_core::synth::{generate_counts, jobs_from_counts, SynthConfig};
use autoscale_core::trace::{self, BucketCountSeries, JobRecord};

use config::Config;

#[derive(Parser)]
#[command(name = "autoscale", version, about = "Predictive overprovisioning toolkit for elastic batch clusters")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set window_len=48`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic job trace and its bucket-count series.
    Generate,
    /// Sample a job trace into a bucket-count series.
    Ingest,
    /// Embed the jobs running at one instant into bucket counts.
    Buckets {
        /// Snapshot time, in trace time units.
        #[arg(long)]
        time: i64,
    },
    /// Choose the base instance type of a family from the trace.
    BaseInstance,
    /// Fit the configured predictor on the training rows and write a checkpoint.
    Train,
    /// Forecast the next tick and build the placeholder plan.
    Predict {
        /// Current embedded counts; defaults to the last series row.
        #[arg(long, value_delimiter = ',')]
        current: Option<Vec<u64>>,
    },
    /// Replay the evaluation rows under one policy.
    Simulate {
        /// predictive, on-demand, static, ladder or oracle.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Fit and replay several predictors and baselines side by side.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "static,holt-winters,arima,on-demand,ladder,oracle")]
        models: Vec<String>,
    },
    /// Encoder attention weights of a trained Transformer for one window.
    ExportAttention {
        /// Window ends just before this row; defaults to the end of the series.
        #[arg(long)]
        tick: Option<usize>,
    },
    /// Print the effective configuration.
    Config,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{o}`"))?;
        cfg.set(k, v).with_context(|| format!("--set {o}"))?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    match cli.command {
        Command::Generate => generate(&cfg),
        Command::Ingest => ingest(&cfg),
        Command::Buckets { time } => buckets(&cfg, time),
        Command::BaseInstance => base_instance(&cfg),
        Command::Train => train(&cfg),
        Command::Predict { current } => predict(&cfg, current),
        Command::Simulate { policy } => simulate(&cfg, policy.as_deref().unwrap_or(&cfg.policy)),
        Command::Compare { models } => compare(&cfg, &models),
        Command::ExportAttention { tick } => export_attention(&cfg, tick),
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn out_dir(cfg: &Config) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn load_catalog(cfg: &Config) -> Result<BucketCatalog> {
    let text = fs::read_to_string(&cfg.catalog)
        .with_context(|| format!("reading catalog {} (set `catalog`)", cfg.catalog.display()))?;
    BucketCatalog::from_csv(&text, cfg.tick_seconds).with_context(|| format!("in catalog {}", cfg.catalog.display()))
}

fn trace_path(cfg: &Config) -> Result<&Path> {
    cfg.trace
        .as_deref()
        .ok_or_else(|| anyhow!("no trace given; set `trace = <file>` or `--set trace=<file>`"))
}

fn load_trace(cfg: &Config, catalog: &BucketCatalog) -> Result<Vec<JobRecord>> {
    let path = trace_path(cfg)?;
    trace::ingest_path(path, catalog.space()).with_context(|| format!("in trace {}", path.display()))
}

fn series_path(cfg: &Config) -> PathBuf {
    cfg.series.clone().unwrap_or_else(|| cfg.out.join("series.txt"))
}

fn model_path(cfg: &Config) -> PathBuf {
    cfg.model.clone().unwrap_or_else(|| cfg.out.join("model.ckpt"))
}

fn load_series(cfg: &Config) -> Result<BucketCountSeries> {
    let path = series_path(cfg);
    BucketCountSeries::load(&path)
        .with_context(|| format!("loading series {} (run `ingest` or set `series`)", path.display()))
}

/// Series plus the catalog it was sampled with, checked for consistency.
fn load_series_with_catalog(cfg: &Config) -> Result<(BucketCountSeries, BucketCatalog)> {
    let series = load_series(cfg)?;
    let catalog = load_catalog(cfg)?;
    series.catalog.check(&catalog).with_context(|| {
        format!(
            "series {} was not sampled with catalog {}",
            series_path(cfg).display(),
            cfg.catalog.display()
        )
    })?;
    if series.tick_seconds != cfg.tick_seconds {
        bail!(
            "series uses {}-second ticks but tick_seconds = {}",
            series.tick_seconds,
            cfg.tick_seconds
        );
    }
    Ok((series, catalog))
}

fn sampling_range(jobs: &[JobRecord]) -> Result<(i64, i64)> {
    let start = jobs.iter().map(|j| j.submit_time).min();
    let end = jobs.iter().map(|j| j.end_time).max();
    match (start, end) {
        (Some(s), Some(e)) => Ok((s, e)),
        _ => bail!("the trace contains no jobs"),
    }
}

fn eval_start(cfg: &Config, rows: usize) -> Result<usize> {
    if cfg.test_ticks == 0 || cfg.test_ticks >= rows {
        bail!("test_ticks = {} must lie in 1..{rows} for a series of {rows} rows", cfg.test_ticks);
    }
    Ok(rows - cfg.test_ticks)
}

fn transformer_config(cfg: &Config) -> TransformerConfig {
    TransformerConfig {
        d_model: cfg.d_model,
        heads: cfg.heads,
        encoder_layers: cfg.encoder_layers,
        decoder_layers: cfg.decoder_layers,
        dropout: cfg.dropout,
        warmup_steps: cfg.warmup_steps,
        periods: cfg.periods.clone(),
        window_len: cfg.window_len,
        batch_size: cfg.batch_size,
        train_steps: cfg.train_steps,
        seed: cfg.seed,
        ..TransformerConfig::default()
    }
}

fn generate(cfg: &Config) -> Result<()> {
    let catalog = load_catalog(cfg)?;
    if cfg.synth_types.len() != cfg.synth_levels.len() {
        bail!(
            "synth_types lists {} instance types but synth_levels has {} values",
            cfg.synth_types.len(),
            cfg.synth_levels.len()
        );
    }
    let mut chosen = Vec::new();
    for t in &cfg.synth_types {
        let b = catalog
            .buckets()
            .iter()
            .find(|b| &b.instance_type == t)
            .ok_or_else(|| anyhow!("synth type `{t}` is not in catalog {}", cfg.catalog.display()))?;
        chosen.push(b.clone());
    }
    // generator columns follow catalog order
    let sub = BucketCatalog::new(catalog.space().clone(), chosen)?;
    let levels: Vec<f64> = sub
        .instance_types()
        .iter()
        .map(|t| cfg.synth_levels[cfg.synth_types.iter().position(|x| x == t).expect("chosen from list")])
        .collect();
    let synth = SynthConfig {
        days: cfg.synth_days,
        levels,
        base_fraction: cfg.synth_base_fraction,
        trend_per_day: cfg.synth_trend,
        noise: cfg.synth_noise,
        bursts: cfg.synth_bursts,
        seed: cfg.seed,
        ..SynthConfig::default()
    };
    let counts = generate_counts(&synth)?;
    let jobs = jobs_from_counts(&counts, &sub, cfg.tick_seconds, cfg.synth_start)?;
    let end = cfg.synth_start + (counts.len() as u64 * cfg.tick_seconds) as i64;
    let series = trace::sample_series(
        &jobs,
        &catalog,
        &cfg.catalog.display().to_string(),
        cfg.tick_seconds,
        cfg.synth_start,
        end,
    )?;
    let dir = out_dir(cfg)?;
    write(&dir.join("trace.csv"), &trace::write_trace(&jobs, catalog.space()))?;
    write(&dir.join("series.txt"), &series.to_text())?;
    println!("{} jobs, {} ticks, {} buckets", jobs.len(), series.rows(), series.buckets());
    Ok(())
}

fn ingest(cfg: &Config) -> Result<()> {
    let catalog = load_catalog(cfg)?;
    let jobs = load_trace(cfg, &catalog)?;
    let (start, end) = sampling_range(&jobs)?;
    let series = trace::sample_series(
        &jobs,
        &catalog,
        &cfg.catalog.display().to_string(),
        cfg.tick_seconds,
        start,
        end,
    )?;
    let path = cfg.series.clone().unwrap_or(out_dir(cfg)?.join("series.txt"));
    write(&path, &series.to_text())?;
    println!("{} jobs sampled into {} ticks x {} buckets", jobs.len(), series.rows(), series.buckets());
    Ok(())
}

fn buckets(cfg: &Config, time: i64) -> Result<()> {
    let catalog = load_catalog(cfg)?;
    let jobs = load_trace(cfg, &catalog)?;
    let counts = embed_requirements(&trace::snapshot_at(&jobs, time), &catalog)?;
    let mut csv = String::from("bucket,instance_type,raw,rounded\n");
    for (i, b) in catalog.buckets().iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{},{}", b.instance_type, counts.raw[i], counts.rounded[i]);
    }
    print!("{csv}");
    write(&out_dir(cfg)?.join("buckets.csv"), &csv)
}

fn base_instance(cfg: &Config) -> Result<()> {
    let catalog = load_catalog(cfg)?;
    let family = catalog.family(&cfg.family)?;
    let jobs = load_trace(cfg, &catalog)?;
    let (start, end) = sampling_range(&jobs)?;
    let step = cfg.tick_seconds as i64;
    let mut snapshots = Vec::new();
    let mut skipped = 0usize;
    let mut t = start;
    while t < end {
        let mut snap = Vec::new();
        for demand in trace::snapshot_at(&jobs, t) {
            // jobs that no family member can host run elsewhere
            if family.first_fit(&demand)?.is_some() {
                snap.push(demand);
            } else {
                skipped += 1;
            }
        }
        snapshots.push(snap);
        t += step;
    }
    if skipped > 0 {
        eprintln!("note: {skipped} job-instances fit no `{}` instance and were left out", cfg.family);
    }
    let sel = select_base_instance(&snapshots, &family)?;
    let mut csv = String::from("smallest_type,scale,scale_decimal\n");
    for s in &sel.scale_table {
        match s.scale {
            Some(v) => {
                let _ = writeln!(
                    csv,
                    "{},{v},{}",
                    s.smallest_type,
                    autoscale_core::resources::amount_to_f64(&v)
                );
            }
            None => {
                let _ = writeln!(csv, "{},unpackable,", s.smallest_type);
            }
        }
    }
    write(&out_dir(cfg)?.join("base_instance.csv"), &csv)?;
    if !sel.dropped.is_empty() {
        println!("dropped: {}", sel.dropped.join(", "));
    }
    println!("base instance: {}", sel.instance_type);
    Ok(())
}

/// Fits the named predictor; returns the model and a training log CSV.
fn fit_model(cfg: &Config, name: &str, train_rows: &Matrix) -> Result<(SavedModel, String)> {
    Ok(match name {
        "static" => {
            let mut m = StaticMax::new();
            m.fit(train_rows)?;
            (SavedModel::Static(m), String::new())
        }
        "holt-winters" => {
            let mut m = HoltWinters::new(HoltWintersParams {
                alpha: cfg.hw_alpha,
                beta: cfg.hw_beta,
                gamma: cfg.hw_gamma,
                period: cfg.hw_period,
            });
            m.fit(train_rows)?;
            (SavedModel::HoltWinters(m), String::new())
        }
        "arima" => {
            let mut m = DifferencedArma::new(cfg.arima_p, cfg.arima_q);
            m.fit(train_rows)?;
            if m.ridge_used() {
                eprintln!("note: arima normal equations were singular; ridge regularization applied");
            }
            (SavedModel::Arima(m), String::new())
        }
        "transformer" => {
            let mut m = TransformerForecaster::new(transformer_config(cfg));
            m.fit(train_rows)?;
            let log = m.log.to_csv();
            let model = m.model.ok_or_else(|| anyhow!("transformer produced no model"))?;
            (SavedModel::Transformer(Box::new(model)), log)
        }
        other => bail!("unknown predictor `{other}` (expected static, holt-winters, arima or transformer)"),
    })
}

fn train(cfg: &Config) -> Result<()> {
    let series = load_series(cfg)?;
    let m = series.to_matrix();
    let t0 = eval_start(cfg, m.rows())?;
    let (model, log) = fit_model(cfg, &cfg.predictor, &m.slice_rows(0..t0))?;
    let path = model_path(cfg);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write(&path, &model.to_text()?)?;
    if !log.is_empty() {
        write(&out_dir(cfg)?.join("train_log.csv"), &log)?;
    }
    println!("trained {} on {t0} rows", model.name());
    Ok(())
}

fn load_model(cfg: &Config) -> Result<SavedModel> {
    let path = model_path(cfg);
    SavedModel::load(&path).with_context(|| format!("loading model {} (run `train` or set `model`)", path.display()))
}

fn predict(cfg: &Config, current: Option<Vec<u64>>) -> Result<()> {
    let (series, catalog) = load_series_with_catalog(cfg)?;
    let m = series.to_matrix();
    let model = load_model(cfg)?.into_forecaster();
    if m.rows() < model.min_history().max(1) {
        bail!("{} needs {} rows of history, series has {}", model.name(), model.min_history(), m.rows());
    }
    let predicted = model.predict_next(&m)?;
    let current = current.unwrap_or_else(|| series.counts[series.rows() - 1].clone());
    let groups = match &cfg.groups {
        Some(p) => PlacementGroupSet::load(p).with_context(|| format!("in placement groups {}", p.display()))?,
        None => PlacementGroupSet::unbounded(),
    };
    let plan = autoscaler::plan(&predicted, &ClusterSnapshot::with_current(current.clone()), &groups, cfg.vi_max_size)?;
    let types = catalog.instance_types();
    let mut csv = String::from("bucket,instance_type,predicted,current\n");
    for (i, p) in predicted.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{p},{}", types[i], current[i]);
    }
    let dir = out_dir(cfg)?;
    write(&dir.join("prediction.csv"), &csv)?;
    write(&dir.join("plan.csv"), &plan.to_csv(&types))?;
    if plan.is_on_demand_fallback() {
        eprintln!("notice: on-demand fallback: no bucket is forecast above current usage, no placeholders requested");
    }
    print!("{}", plan.to_csv(&types));
    Ok(())
}

fn policy_for<'a>(cfg: &Config, name: &str, model: Option<&'a dyn Forecaster>) -> Result<Policy<'a>> {
    Ok(match name {
        "predictive" => Policy::Predictive(model.ok_or_else(|| anyhow!("predictive policy needs a model"))?),
        "on-demand" => Policy::OnDemand,
        "static" => Policy::StaticMax,
        "ladder" => Policy::Ladder {
            rungs: vec![cfg.ladder_rungs.clone()],
            lookback: cfg.ladder_lookback,
        },
        "oracle" => Policy::Oracle,
        other => bail!("unknown policy `{other}` (expected predictive, on-demand, static, ladder or oracle)"),
    })
}

fn sim_config(cfg: &Config) -> SimConfig {
    SimConfig {
        tick_seconds: cfg.tick_seconds,
        launch_delay_ticks: cfg.launch_delay_ticks,
        seed: cfg.seed,
    }
}

fn write_report(dir: &Path, suffix: &str, report: &SimReport) -> Result<()> {
    write(&dir.join(format!("report{suffix}.txt")), &report.summary())?;
    write(&dir.join(format!("per_tick{suffix}.csv")), &report.per_tick_csv())
}

fn simulate(cfg: &Config, policy_name: &str) -> Result<()> {
    let (series, catalog) = load_series_with_catalog(cfg)?;
    let m = series.to_matrix();
    let prices = catalog.prices();
    let t0 = eval_start(cfg, m.rows())?;
    let model = if policy_name == "predictive" {
        Some(load_model(cfg)?.into_forecaster())
    } else {
        None
    };
    let policy = policy_for(cfg, policy_name, model.as_deref())?;
    let input = SimInput {
        series: &m,
        prices: &prices,
        eval_start: t0,
    };
    let report = sim::run(input, &policy, &sim_config(cfg))?;
    write_report(out_dir(cfg)?, "", &report)?;
    print!("{}", report.summary());
    Ok(())
}

fn compare(cfg: &Config, models: &[String]) -> Result<()> {
    let (series, catalog) = load_series_with_catalog(cfg)?;
    let m = series.to_matrix();
    let prices = catalog.prices();
    let t0 = eval_start(cfg, m.rows())?;
    let train_rows = m.slice_rows(0..t0);
    let input = SimInput {
        series: &m,
        prices: &prices,
        eval_start: t0,
    };
    let dir = out_dir(cfg)?;
    let mut entries = Vec::new();
    for name in models {
        let (report, fit_seconds) = match name.as_str() {
            "on-demand" | "ladder" | "oracle" => (sim::run(input, &policy_for(cfg, name, None)?, &sim_config(cfg))?, 0.0),
            _ => {
                let start = Instant::now();
                let (model, _) = fit_model(cfg, name, &train_rows)?;
                let secs = start.elapsed().as_secs_f64();
                let f = model.into_forecaster();
                (sim::run(input, &Policy::Predictive(f.as_ref()), &sim_config(cfg))?, secs)
            }
        };
        write_report(dir, &format!("_{name}"), &report)?;
        entries.push(ComparisonEntry {
            name: name.clone(),
            report,
            fit_seconds,
        });
    }
    let table = sim::compare(entries)?;
    write(&dir.join("comparison.csv"), &table.to_csv())?;
    write(&dir.join("comparison.txt"), &table.to_text())?;
    print!("{}", table.to_text());
    Ok(())
}

fn export_attention(cfg: &Config, tick: Option<usize>) -> Result<()> {
    let series = load_series(cfg)?;
    let m = series.to_matrix();
    let SavedModel::Transformer(model) = load_model(cfg)? else {
        bail!("export-attention needs a transformer checkpoint");
    };
    let norm = model
        .normalization
        .clone()
        .ok_or_else(|| anyhow!("checkpoint has no normalization; it was never trained"))?;
    let l = model.config.window_len;
    let end = tick.unwrap_or(m.rows());
    if end < l || end > m.rows() {
        bail!("window of {l} rows ending before row {end} does not fit a series of {} rows", m.rows());
    }
    let window = norm.normalize_matrix(&m.slice_rows(end - l..end));
    let out = model.forward(&window)?;
    write(&out_dir(cfg)?.join("attention.csv"), &attention_csv(&out.attention))
}
