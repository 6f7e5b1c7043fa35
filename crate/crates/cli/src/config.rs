//! `key = value` run configuration. Blank lines and `#` comments are ignored;
//! unknown keys are errors. Command-line `--set key=value` uses the same keys.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub trace: Option<PathBuf>,
    pub catalog: PathBuf,
    pub groups: Option<PathBuf>,
    pub series: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: PathBuf,
    pub tick_seconds: u64,
    pub window_len: usize,
    pub periods: Vec<usize>,
    /// Trailing series rows held out for evaluation.
    pub test_ticks: usize,
    pub predictor: String,
    pub hw_alpha: f64,
    pub hw_beta: f64,
    pub hw_gamma: f64,
    pub hw_period: usize,
    pub arima_p: usize,
    pub arima_q: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub train_steps: usize,
    pub policy: String,
    pub launch_delay_ticks: u64,
    pub ladder_rungs: Vec<u64>,
    pub ladder_lookback: usize,
    pub family: String,
    pub vi_max_size: u64,
    pub seed: u64,
    pub synth_days: usize,
    pub synth_types: Vec<String>,
    pub synth_levels: Vec<f64>,
    pub synth_base_fraction: f64,
    pub synth_trend: f64,
    pub synth_noise: f64,
    pub synth_bursts: bool,
    pub synth_start: i64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            trace: None,
            catalog: PathBuf::from("data/catalog.csv"),
            groups: None,
            series: None,
            model: None,
            out: PathBuf::from("out"),
            tick_seconds: 300,
            window_len: 576,
            periods: vec![2016, 288],
            test_ticks: 576,
            predictor: "transformer".into(),
            hw_alpha: 0.5,
            hw_beta: 0.001,
            hw_gamma: 0.3,
            hw_period: 2016,
            arima_p: 7,
            arima_q: 7,
            d_model: 64,
            heads: 4,
            encoder_layers: 6,
            decoder_layers: 6,
            dropout: 0.2,
            warmup_steps: 5000,
            batch_size: 32,
            train_steps: 10_000,
            policy: "predictive".into(),
            launch_delay_ticks: 1,
            ladder_rungs: vec![2, 5, 10, 20, 50, 100],
            ladder_lookback: 12,
            family: "m5.".into(),
            vi_max_size: 8,
            seed: 0,
            synth_days: 32,
            synth_types: vec!["m5.xlarge".into(), "m5.4xlarge".into(), "g4dn.2xlarge".into()],
            synth_levels: vec![40.0, 16.0, 8.0],
            synth_base_fraction: 0.25,
            synth_trend: 0.005,
            synth_noise: 0.05,
            synth_bursts: false,
            synth_start: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("`{key}`: cannot parse `{value}`"))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "trace" => self.trace = path(v),
            "catalog" => self.catalog = PathBuf::from(v),
            "groups" => self.groups = path(v),
            "series" => self.series = path(v),
            "model" => self.model = path(v),
            "out" => self.out = PathBuf::from(v),
            "tick_seconds" => self.tick_seconds = parse(key, v)?,
            "window_len" => self.window_len = parse(key, v)?,
            "periods" => self.periods = list(key, v)?,
            "test_ticks" => self.test_ticks = parse(key, v)?,
            "predictor" => self.predictor = v.to_string(),
            "hw_alpha" => self.hw_alpha = parse(key, v)?,
            "hw_beta" => self.hw_beta = parse(key, v)?,
            "hw_gamma" => self.hw_gamma = parse(key, v)?,
            "hw_period" => self.hw_period = parse(key, v)?,
            "arima_p" => self.arima_p = parse(key, v)?,
            "arima_q" => self.arima_q = parse(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "encoder_layers" => self.encoder_layers = parse(key, v)?,
            "decoder_layers" => self.decoder_layers = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "warmup_steps" => self.warmup_steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "train_steps" => self.train_steps = parse(key, v)?,
            "policy" => self.policy = v.to_string(),
            "launch_delay_ticks" => self.launch_delay_ticks = parse(key, v)?,
            "ladder_rungs" => self.ladder_rungs = list(key, v)?,
            "ladder_lookback" => self.ladder_lookback = parse(key, v)?,
            "family" => self.family = v.to_string(),
            "vi_max_size" => self.vi_max_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "synth_days" => self.synth_days = parse(key, v)?,
            "synth_types" => self.synth_types = list(key, v)?,
            "synth_levels" => self.synth_levels = list(key, v)?,
            "synth_base_fraction" => self.synth_base_fraction = parse(key, v)?,
            "synth_trend" => self.synth_trend = parse(key, v)?,
            "synth_noise" => self.synth_noise = parse(key, v)?,
            "synth_bursts" => self.synth_bursts = parse(key, v)?,
            "synth_start" => self.synth_start = parse(key, v)?,
            other => bail!("unknown configuration key `{other}`"),
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, found `{line}`", i + 1))?;
            c.set(k, v).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse_text(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Every key with its current value, in a form [`Config::parse_text`] accepts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("trace", show_path(&self.trace));
        kv("catalog", self.catalog.display().to_string());
        kv("groups", show_path(&self.groups));
        kv("series", show_path(&self.series));
        kv("model", show_path(&self.model));
        kv("out", self.out.display().to_string());
        kv("tick_seconds", self.tick_seconds.to_string());
        kv("window_len", self.window_len.to_string());
        kv("periods", join(&self.periods));
        kv("test_ticks", self.test_ticks.to_string());
        kv("predictor", self.predictor.clone());
        kv("hw_alpha", self.hw_alpha.to_string());
        kv("hw_beta", self.hw_beta.to_string());
        kv("hw_gamma", self.hw_gamma.to_string());
        kv("hw_period", self.hw_period.to_string());
        kv("arima_p", self.arima_p.to_string());
        kv("arima_q", self.arima_q.to_string());
        kv("d_model", self.d_model.to_string());
        kv("heads", self.heads.to_string());
        kv("encoder_layers", self.encoder_layers.to_string());
        kv("decoder_layers", self.decoder_layers.to_string());
        kv("dropout", self.dropout.to_string());
        kv("warmup_steps", self.warmup_steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("train_steps", self.train_steps.to_string());
        kv("policy", self.policy.clone());
        kv("launch_delay_ticks", self.launch_delay_ticks.to_string());
        kv("ladder_rungs", join(&self.ladder_rungs));
        kv("ladder_lookback", self.ladder_lookback.to_string());
        kv("family", self.family.clone());
        kv("vi_max_size", self.vi_max_size.to_string());
        kv("seed", self.seed.to_string());
        kv("synth_days", self.synth_days.to_string());
        kv("synth_types", self.synth_types.join(","));
        kv("synth_levels", join(&self.synth_levels));
        kv("synth_base_fraction", self.synth_base_fraction.to_string());
        kv("synth_trend", self.synth_trend.to_string());
        kv("synth_noise", self.synth_noise.to_string());
        kv("synth_bursts", self.synth_bursts.to_string());
        kv("synth_start", self.synth_start.to_string());
        s
    }
}
