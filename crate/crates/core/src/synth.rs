//! Seeded synthetic workload: a daily two-peak (working hours) cycle with linear
//! growth, multiplicative Gaussian noise and optional on-and-off bursts.
//!
//! The generator emits per-bucket instance counts and a job trace whose sampled
//! series reproduces those counts exactly: every job asks for exactly one bucket
//! boundary, so each running job occupies one instance of its bucket.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::forecast::Matrix;
use crate::resources::BucketCatalog;
use crate::trace::JobRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub days: usize,
    pub ticks_per_day: usize,
    /// Peak count of each bucket on day zero.
    pub levels: Vec<f64>,
    /// Overnight load as a fraction of the peak.
    pub base_fraction: f64,
    /// Relative growth per day.
    pub trend_per_day: f64,
    /// Standard deviation of the multiplicative noise.
    pub noise: f64,
    pub bursts: bool,
    /// Per-tick, per-bucket probability that a burst starts.
    pub burst_rate: f64,
    pub burst_ticks: usize,
    /// Burst height as a fraction of the bucket's peak level.
    pub burst_height: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 32,
            ticks_per_day: 288,
            levels: vec![40.0, 16.0, 8.0],
            base_fraction: 0.25,
            trend_per_day: 0.005,
            noise: 0.05,
            bursts: false,
            burst_rate: 0.002,
            burst_ticks: 12,
            burst_height: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.days == 0 || self.ticks_per_day == 0 {
            return bad("days and ticks_per_day must be positive".into());
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return bad("levels must be a non-empty list of non-negative numbers".into());
        }
        if !(0.0..=1.0).contains(&self.base_fraction) {
            return bad(format!("base_fraction {} outside [0, 1]", self.base_fraction));
        }
        if !(self.noise >= 0.0) || !self.trend_per_day.is_finite() {
            return bad("noise must be non-negative and trend finite".into());
        }
        if !(0.0..=1.0).contains(&self.burst_rate) || !(self.burst_height >= 0.0) {
            return bad("burst_rate must lie in [0, 1] and burst_height be non-negative".into());
        }
        Ok(())
    }

    pub fn ticks(&self) -> usize {
        self.days * self.ticks_per_day
    }
}

/// Daily shape in `[base, 1]`: morning and afternoon peaks over a flat night.
pub fn daily_shape(phase: f64, base: f64) -> f64 {
    let hour = 24.0 * phase;
    let bump = |mu: f64| (-0.5 * ((hour - mu) / 2.0).powi(2)).exp();
    base + (1.0 - base) * (bump(10.5) + bump(15.5)).min(1.0)
}

/// `ticks x buckets` counts.
pub fn generate_counts(config: &SynthConfig) -> Result<Vec<Vec<u64>>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let b = config.levels.len();
    let mut burst_left = vec![0usize; b];
    let mut out = Vec::with_capacity(config.ticks());
    for t in 0..config.ticks() {
        let day = t as f64 / config.ticks_per_day as f64;
        let phase = (t % config.ticks_per_day) as f64 / config.ticks_per_day as f64;
        let shape = daily_shape(phase, config.base_fraction);
        let growth = 1.0 + config.trend_per_day * day;
        let mut row = Vec::with_capacity(b);
        for c in 0..b {
            let level = config.levels[c];
            let mut v = level * growth * shape * (1.0 + noise.sample(&mut rng));
            if config.bursts {
                if burst_left[c] == 0 && rng.random::<f64>() < config.burst_rate {
                    burst_left[c] = config.burst_ticks;
                }
                if burst_left[c] > 0 {
                    burst_left[c] -= 1;
                    v += config.burst_height * level;
                }
            }
            row.push(v.round().max(0.0) as u64);
        }
        out.push(row);
    }
    Ok(out)
}

pub fn counts_to_matrix(counts: &[Vec<u64>]) -> Matrix {
    let rows: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    Matrix::from_rows(&rows)
}

/// Jobs realizing `counts`: one job per instance, demand equal to its bucket
/// boundary. When a count drops, the most recently started jobs finish first.
/// Jobs still running at the end finish at `start + ticks * tick_seconds`.
pub fn jobs_from_counts(
    counts: &[Vec<u64>],
    catalog: &BucketCatalog,
    tick_seconds: u64,
    start: i64,
) -> Result<Vec<JobRecord>> {
    let b = catalog.len();
    if let Some(row) = counts.iter().find(|r| r.len() != b) {
        return Err(Error::LengthMismatch {
            expected: b,
            found: row.len(),
        });
    }
    let step = tick_seconds as i64;
    let end = start + counts.len() as i64 * step;
    let mut jobs: Vec<JobRecord> = Vec::new();
    let mut running: Vec<Vec<usize>> = vec![Vec::new(); b];
    for (t, row) in counts.iter().enumerate() {
        let now = start + t as i64 * step;
        for (c, &want) in row.iter().enumerate() {
            let want = want as usize;
            while running[c].len() > want {
                let k = running[c].pop().expect("non-empty");
                jobs[k].end_time = now;
            }
            while running[c].len() < want {
                running[c].push(jobs.len());
                jobs.push(JobRecord {
                    job_id: format!("job-{}", jobs.len()),
                    submit_time: now,
                    end_time: end,
                    demand: catalog.buckets()[c].boundary.clone(),
                    gang_size: 1,
                });
            }
        }
    }
    Ok(jobs)
}
