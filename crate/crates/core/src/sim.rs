//! Discrete-time replay of a bucket-count series under a provisioning policy.
//!
//! Each evaluation tick `t` runs, in order:
//!
//! 1. launches whose ready time has come join the ready pool;
//! 2. demand `d_t` is observed; any bucket with `d_t > ready` flags the tick as a
//!    violation, the shortfall adds to pending instance-ticks and is requested on
//!    demand (ready after the launch delay, or immediately with zero delay);
//! 3. the policy sets the target for `t + 1`, never below `d_t`, and the missing
//!    instances are requested ahead of time;
//! 4. ready instances above the target are released;
//! 5. the tick is billed for `max(ready, d_t)` instances per bucket, where `ready`
//!    is the pool from step 1 (shortfall instances are billed while launching).
//!
//! Cost is exact rational arithmetic over per-tick prices.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use crate::autoscaler::{ceil_count, ladder_policy, validate_rungs};
use crate::error::{Error, Result};
use crate::forecast::metrics::{mse, pmse};
use crate::forecast::{Forecaster, Matrix, MinMax};
use crate::resources::{amount_to_f64, Amount};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub tick_seconds: u64,
    pub launch_delay_ticks: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            tick_seconds: 300,
            launch_delay_ticks: 1,
            seed: 0,
        }
    }
}

pub enum Policy<'a> {
    /// Ceiling of a fitted one-step forecaster.
    Predictive(&'a dyn Forecaster),
    /// Provision what is currently demanded.
    OnDemand,
    /// Per-bucket maximum of the training rows.
    StaticMax,
    /// Smallest rung covering the maximum over the last `lookback` ticks. One
    /// rung list per bucket, or a single list shared by all buckets.
    Ladder { rungs: Vec<Vec<u64>>, lookback: usize },
    /// Clairvoyant: the true next demand.
    Oracle,
}

impl Policy<'_> {
    pub fn name(&self) -> String {
        match self {
            Policy::Predictive(f) => f.name().to_string(),
            Policy::OnDemand => "on-demand".into(),
            Policy::StaticMax => "static".into(),
            Policy::Ladder { .. } => "ladder".into(),
            Policy::Oracle => "oracle".into(),
        }
    }
}

/// Replay input: a count series, per-bucket prices and the first evaluated row.
/// Rows before `eval_start` are the training split.
#[derive(Debug, Clone, Copy)]
pub struct SimInput<'a> {
    pub series: &'a Matrix,
    pub prices: &'a [Amount],
    pub eval_start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRow {
    pub tick: usize,
    pub bucket: usize,
    pub demand: u64,
    pub predicted: f64,
    pub ready: u64,
    pub launching: u64,
    /// Ready instances not used by demand.
    pub placeholders: u64,
    pub issued: u64,
    pub released: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub policy: String,
    pub config_fingerprint: String,
    pub config: SimConfig,
    pub eval_start: usize,
    pub ticks: usize,
    pub buckets: usize,
    pub mse: f64,
    pub pmse: f64,
    pub mse_normalized: f64,
    pub pmse_normalized: f64,
    pub total_cost: Amount,
    pub violation_ticks: u64,
    pub pending_instance_ticks: u64,
    pub arrivals: u64,
    pub mean_pending_ticks: f64,
    pub issued: u64,
    pub released: u64,
    pub ladder_overflow_ticks: u64,
    pub per_tick: Vec<TickRow>,
}

impl SimReport {
    pub fn total_cost_f64(&self) -> f64 {
        amount_to_f64(&self.total_cost)
    }

    /// `key = value` summary block.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "policy = {}", self.policy);
        let _ = writeln!(s, "config_fingerprint = {}", self.config_fingerprint);
        let _ = writeln!(s, "tick_seconds = {}", self.config.tick_seconds);
        let _ = writeln!(s, "launch_delay_ticks = {}", self.config.launch_delay_ticks);
        let _ = writeln!(s, "seed = {}", self.config.seed);
        let _ = writeln!(s, "eval_start = {}", self.eval_start);
        let _ = writeln!(s, "ticks = {}", self.ticks);
        let _ = writeln!(s, "buckets = {}", self.buckets);
        let _ = writeln!(s, "mse_normalized = {}", self.mse_normalized);
        let _ = writeln!(s, "pmse_normalized = {}", self.pmse_normalized);
        let _ = writeln!(s, "mse = {}", self.mse);
        let _ = writeln!(s, "pmse = {}", self.pmse);
        let _ = writeln!(s, "total_cost = {}", self.total_cost);
        let _ = writeln!(s, "total_cost_decimal = {}", self.total_cost_f64());
        let _ = writeln!(s, "violation_ticks = {}", self.violation_ticks);
        let _ = writeln!(s, "pending_instance_ticks = {}", self.pending_instance_ticks);
        let _ = writeln!(s, "arrivals = {}", self.arrivals);
        let _ = writeln!(s, "mean_pending_ticks = {}", self.mean_pending_ticks);
        let _ = writeln!(s, "issued = {}", self.issued);
        let _ = writeln!(s, "released = {}", self.released);
        let _ = writeln!(s, "ladder_overflow_ticks = {}", self.ladder_overflow_ticks);
        s
    }

    pub fn per_tick_csv(&self) -> String {
        let mut s = String::from("tick,bucket,demand,predicted,ready,launching,placeholders,issued,released\n");
        for r in &self.per_tick {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.tick, r.bucket, r.demand, r.predicted, r.ready, r.launching, r.placeholders, r.issued, r.released
            );
        }
        s
    }
}

fn fingerprint(input: &SimInput<'_>, config: &SimConfig) -> String {
    let mut h = DefaultHasher::new();
    input.series.rows().hash(&mut h);
    input.series.cols().hash(&mut h);
    for v in input.series.data() {
        v.to_bits().hash(&mut h);
    }
    for p in input.prices {
        p.hash(&mut h);
    }
    input.eval_start.hash(&mut h);
    config.tick_seconds.hash(&mut h);
    config.launch_delay_ticks.hash(&mut h);
    config.seed.hash(&mut h);
    format!("{:016x}", h.finish())
}

fn demand_row(series: &Matrix, t: usize) -> Result<Vec<u64>> {
    series
        .row(t)
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as u64)
            } else {
                Err(Error::SeriesRow {
                    row: t,
                    reason: format!("demand {v} is not a non-negative integer"),
                })
            }
        })
        .collect()
}

/// Per-tick forecasts of the demand at `t` for every `t` in `eval_start..=rows`
/// (the last one is only used as the final target), as raw values.
struct Targets {
    predicted: Matrix,
    overflow: Vec<bool>,
}

fn policy_targets(policy: &Policy<'_>, input: &SimInput<'_>, demand: &[Vec<u64>]) -> Result<Targets> {
    let series = input.series;
    let (rows, b, t0) = (series.rows(), series.cols(), input.eval_start);
    let mut predicted = Matrix::zeros(rows - t0, b);
    let mut overflow = vec![false; rows - t0];
    match policy {
        Policy::Predictive(f) => {
            if t0 < f.min_history() {
                return Err(Error::InsufficientHistory {
                    needed: f.min_history(),
                    available: t0,
                });
            }
            predicted = f.predict_range(series, t0..rows)?;
        }
        Policy::OnDemand => {
            for t in t0..rows {
                predicted.row_mut(t - t0).copy_from_slice(series.row(t - 1));
            }
        }
        Policy::StaticMax => {
            let max = series.slice_rows(0..t0).column_max();
            for t in t0..rows {
                predicted.row_mut(t - t0).copy_from_slice(&max);
            }
        }
        Policy::Ladder { rungs, lookback } => {
            if *lookback == 0 {
                return Err(Error::InvalidConfig("ladder lookback must be positive".into()));
            }
            if rungs.len() != 1 && rungs.len() != b {
                return Err(Error::InvalidConfig(format!(
                    "ladder has {} rung lists for {b} buckets",
                    rungs.len()
                )));
            }
            for r in rungs {
                validate_rungs(r)?;
            }
            for t in t0..rows {
                let from = t.saturating_sub(*lookback);
                for c in 0..b {
                    let recent = (from..t).map(|u| demand[u][c]).max().unwrap_or(0);
                    let levels = if rungs.len() == 1 { &rungs[0] } else { &rungs[c] };
                    let out = ladder_policy(&[recent], levels)?;
                    predicted.set(t - t0, c, out.targets[0] as f64);
                    overflow[t - t0] |= out.overflow[0];
                }
            }
        }
        Policy::Oracle => {
            predicted = series.slice_rows(t0..rows);
        }
    }
    if predicted.rows() != rows - t0 || predicted.cols() != b {
        return Err(Error::ShapeMismatch(format!(
            "policy produced {}x{} targets, expected {}x{b}",
            predicted.rows(),
            predicted.cols(),
            rows - t0
        )));
    }
    Ok(Targets { predicted, overflow })
}

/// Replays rows `eval_start..rows` of the series under `policy`.
pub fn run(input: SimInput<'_>, policy: &Policy<'_>, config: &SimConfig) -> Result<SimReport> {
    let series = input.series;
    let (rows, b, t0) = (series.rows(), series.cols(), input.eval_start);
    if b == 0 {
        return Err(Error::Empty("bucket columns"));
    }
    if input.prices.len() != b {
        return Err(Error::LengthMismatch {
            expected: b,
            found: input.prices.len(),
        });
    }
    if t0 == 0 || t0 >= rows {
        return Err(Error::InvalidConfig(format!(
            "evaluation must start inside the series (1..{rows}), got {t0}"
        )));
    }
    let demand: Vec<Vec<u64>> = (0..rows).map(|t| demand_row(series, t)).collect::<Result<_>>()?;
    let targets = policy_targets(policy, &input, &demand)?;
    let target_for = |t: usize| -> Vec<u64> {
        // target for tick t, decided at t - 1 when d_{t-1} is known
        (0..b)
            .map(|c| {
                let raw = if t < rows {
                    ceil_count(targets.predicted.get(t - t0, c))
                } else {
                    0
                };
                raw.max(demand[t - 1][c])
            })
            .collect()
    };

    let delay = config.launch_delay_ticks as usize;
    let lead = delay.max(1);
    let mut ready = target_for(t0);
    let mut issued: Vec<u64> = ready.clone();
    let mut released = vec![0u64; b];
    // launches[c] = (ready_at, count), in issue order
    let mut launches: Vec<Vec<(usize, u64)>> = vec![Vec::new(); b];
    let mut total_cost = Amount::from_integer(0);
    let mut violation_ticks = 0;
    let mut pending = 0;
    let mut arrivals = 0;
    let mut overflow_ticks = 0;
    let mut per_tick = Vec::with_capacity((rows - t0) * b);

    for t in t0..rows {
        let d = &demand[t];
        let mut violated = false;
        let mut tick_cost = Amount::from_integer(0);
        let next_target = if t + 1 < rows { Some(target_for(t + 1)) } else { None };
        if targets.overflow[t - t0] {
            overflow_ticks += 1;
        }
        for c in 0..b {
            let arrived: u64 = launches[c].iter().filter(|l| l.0 <= t).map(|l| l.1).sum();
            launches[c].retain(|l| l.0 > t);
            ready[c] += arrived;
            arrivals += d[c].saturating_sub(demand[t - 1][c]);
            tick_cost += Amount::from_integer(ready[c].max(d[c]) as i128) * input.prices[c];

            let mut launching: u64 = launches[c].iter().map(|l| l.1).sum();
            if d[c] > ready[c] {
                let short = d[c] - ready[c];
                let need = short.saturating_sub(launching);
                issued[c] += need;
                if delay == 0 {
                    ready[c] += need;
                } else {
                    violated = true;
                    pending += short;
                    if need > 0 {
                        launches[c].push((t + delay, need));
                        launching += need;
                    }
                }
            }

            let keep = next_target.as_ref().map_or(d[c], |n| n[c].max(d[c]));
            let want = keep.saturating_sub(ready[c] + launching);
            if want > 0 {
                issued[c] += want;
                launches[c].push((t + lead, want));
                launching += want;
            }
            if ready[c] > keep {
                released[c] += ready[c] - keep;
                ready[c] = keep;
            }
            debug_assert_eq!(issued[c], ready[c] + launching + released[c]);
            per_tick.push(TickRow {
                tick: t,
                bucket: c,
                demand: d[c],
                predicted: targets.predicted.get(t - t0, c),
                ready: ready[c],
                launching,
                placeholders: ready[c].saturating_sub(d[c]),
                issued: issued[c],
                released: released[c],
            });
        }
        if violated {
            violation_ticks += 1;
        }
        total_cost += tick_cost;
    }

    let truth = series.slice_rows(t0..rows);
    let norm = MinMax::fit(&series.slice_rows(0..t0));
    let mse_raw = mse(truth.data(), targets.predicted.data())?;
    let pmse_raw = pmse(truth.data(), targets.predicted.data())?;
    let truth_n = norm.normalize_matrix(&truth);
    let pred_n = norm.normalize_matrix(&targets.predicted);
    Ok(SimReport {
        policy: policy.name(),
        config_fingerprint: fingerprint(&input, config),
        config: config.clone(),
        eval_start: t0,
        ticks: rows - t0,
        buckets: b,
        mse: mse_raw,
        pmse: pmse_raw,
        mse_normalized: mse(truth_n.data(), pred_n.data())?,
        pmse_normalized: pmse(truth_n.data(), pred_n.data())?,
        total_cost,
        violation_ticks,
        pending_instance_ticks: pending,
        arrivals,
        mean_pending_ticks: if arrivals == 0 { 0.0 } else { pending as f64 / arrivals as f64 },
        issued: issued.iter().sum(),
        released: released.iter().sum(),
        ladder_overflow_ticks: overflow_ticks,
        per_tick,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonEntry {
    pub name: String,
    pub report: SimReport,
    /// Wall-clock fit time; kept outside the report so reports stay reproducible.
    pub fit_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub entries: Vec<ComparisonEntry>,
}

const COLUMNS: [&str; 9] = [
    "model",
    "mse_normalized",
    "pmse_normalized",
    "mse",
    "pmse",
    "cost",
    "violation_ticks",
    "mean_pending_ticks",
    "fit_seconds",
];

/// Checks that all reports replay the same series and settings.
pub fn compare(entries: Vec<ComparisonEntry>) -> Result<Comparison> {
    let first = entries.first().ok_or(Error::Empty("reports to compare"))?;
    for e in &entries[1..] {
        if e.report.config_fingerprint != first.report.config_fingerprint {
            return Err(Error::MismatchedReports(format!(
                "`{}` ran on configuration {} but `{}` on {}",
                e.name, e.report.config_fingerprint, first.name, first.report.config_fingerprint
            )));
        }
    }
    Ok(Comparison { entries })
}

impl Comparison {
    fn cells(&self) -> Vec<Vec<String>> {
        self.entries
            .iter()
            .map(|e| {
                let r = &e.report;
                vec![
                    e.name.clone(),
                    format!("{:.6e}", r.mse_normalized),
                    format!("{:.6e}", r.pmse_normalized),
                    format!("{:.6e}", r.mse),
                    format!("{:.6e}", r.pmse),
                    format!("{:.4}", r.total_cost_f64()),
                    r.violation_ticks.to_string(),
                    format!("{:.4}", r.mean_pending_ticks),
                    format!("{:.3}", e.fit_seconds),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = COLUMNS.join(",");
        s.push('\n');
        for row in self.cells() {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let widths: Vec<usize> = (0..COLUMNS.len())
            .map(|i| cells.iter().map(|r| r[i].len()).chain([COLUMNS[i].len()]).max().unwrap_or(0))
            .collect();
        let line = |row: &[String]| -> String {
            let mut s = String::new();
            for (i, cell) in row.iter().enumerate() {
                if i == 0 {
                    let _ = write!(s, "{cell:<w$}", w = widths[i]);
                } else {
                    let _ = write!(s, "  {cell:>w$}", w = widths[i]);
                }
            }
            s.push('\n');
            s
        };
        let header: Vec<String> = COLUMNS.iter().map(|c| c.to_string()).collect();
        let mut s = line(&header);
        for row in &cells {
            s.push_str(&line(row));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::static_max::StaticMax;
    use proptest::prelude::*;

    fn series(cols: &[&[u64]]) -> Matrix {
        let rows = cols[0].len();
        let mut m = Matrix::zeros(rows, cols.len());
        for (c, col) in cols.iter().enumerate() {
            for (r, &v) in col.iter().enumerate() {
                m.set(r, c, v as f64);
            }
        }
        m
    }

    fn prices(n: usize) -> Vec<Amount> {
        (1..=n as i128).map(Amount::from_integer).collect()
    }

    #[test]
    fn on_demand_step_trace() {
        let s = series(&[&[2, 2, 2, 5, 5, 5, 9, 9, 4, 4]]);
        let p = prices(1);
        let input = SimInput {
            series: &s,
            prices: &p,
            eval_start: 2,
        };
        let r = run(input, &Policy::OnDemand, &SimConfig::default()).unwrap();
        assert_eq!(r.violation_ticks, 2);
        assert_eq!(r.pending_instance_ticks, 3 + 4);
        assert_eq!(r.arrivals, 7);
        assert!(r.mean_pending_ticks > 0.0);

        let o = run(input, &Policy::Oracle, &SimConfig::default()).unwrap();
        assert_eq!(o.violation_ticks, 0);
        assert_eq!(o.mean_pending_ticks, 0.0);
        assert_eq!(o.mse, 0.0);
        assert!(o.total_cost <= r.total_cost);
    }

    #[test]
    fn zero_delay_never_violates() {
        let s = series(&[&[1, 1, 4, 8, 2, 6]]);
        let p = prices(1);
        let cfg = SimConfig {
            launch_delay_ticks: 0,
            ..SimConfig::default()
        };
        let r = run(
            SimInput {
                series: &s,
                prices: &p,
                eval_start: 1,
            },
            &Policy::OnDemand,
            &cfg,
        )
        .unwrap();
        assert_eq!(r.violation_ticks, 0);
        assert_eq!(r.pending_instance_ticks, 0);
    }

    #[test]
    fn static_cost_and_metrics() {
        let s = series(&[&[3, 7, 2, 5, 6, 1, 7], &[0, 1, 1, 0, 1, 1, 0]]);
        let p = vec![Amount::new(1, 12), Amount::from_integer(2)];
        let input = SimInput {
            series: &s,
            prices: &p,
            eval_start: 3,
        };
        let r = run(input, &Policy::StaticMax, &SimConfig::default()).unwrap();
        let expected = (Amount::from_integer(7) * p[0] + Amount::from_integer(1) * p[1]) * Amount::from_integer(4);
        assert_eq!(r.total_cost, expected);
        assert_eq!(r.mse, r.pmse);
        assert_eq!(r.violation_ticks, 0);

        let mut f = StaticMax::new();
        f.fit(&s.slice_rows(0..3)).unwrap();
        let pr = run(input, &Policy::Predictive(&f), &SimConfig::default()).unwrap();
        assert_eq!(pr.total_cost, r.total_cost);
        assert_eq!(pr.mse, r.mse);
    }

    #[test]
    fn ladder_rounds_up() {
        let s = series(&[&[1, 3, 3, 4, 6, 12, 2]]);
        let p = prices(1);
        let policy = Policy::Ladder {
            rungs: vec![vec![2, 5, 10]],
            lookback: 2,
        };
        let r = run(
            SimInput {
                series: &s,
                prices: &p,
                eval_start: 2,
            },
            &policy,
            &SimConfig::default(),
        )
        .unwrap();
        let preds: Vec<f64> = r.per_tick.iter().map(|t| t.predicted).collect();
        assert_eq!(preds, vec![5.0, 5.0, 5.0, 10.0, 10.0]);
        assert_eq!(r.ladder_overflow_ticks, 1);
    }

    #[test]
    fn predictive_needs_history() {
        struct Long;
        impl Forecaster for Long {
            fn name(&self) -> &str {
                "long"
            }
            fn fit(&mut self, _: &Matrix) -> Result<()> {
                Ok(())
            }
            fn min_history(&self) -> usize {
                10
            }
            fn predict_next(&self, h: &Matrix) -> Result<Vec<f64>> {
                Ok(vec![0.0; h.cols()])
            }
        }
        let s = series(&[&[1, 2, 3, 4, 5]]);
        let p = prices(1);
        let err = run(
            SimInput {
                series: &s,
                prices: &p,
                eval_start: 2,
            },
            &Policy::Predictive(&Long),
            &SimConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory { needed: 10, .. }));
    }

    #[test]
    fn compare_checks_configs() {
        let s = series(&[&[1, 2, 3, 4, 5]]);
        let p = prices(1);
        let input = SimInput {
            series: &s,
            prices: &p,
            eval_start: 2,
        };
        let a = run(input, &Policy::OnDemand, &SimConfig::default()).unwrap();
        let b = run(
            input,
            &Policy::OnDemand,
            &SimConfig {
                launch_delay_ticks: 2,
                ..SimConfig::default()
            },
        )
        .unwrap();
        let entry = |r: &SimReport| ComparisonEntry {
            name: r.policy.clone(),
            report: r.clone(),
            fit_seconds: 0.0,
        };
        assert!(compare(vec![]).is_err());
        assert!(matches!(
            compare(vec![entry(&a), entry(&b)]),
            Err(Error::MismatchedReports(_))
        ));
        let table = compare(vec![entry(&a), entry(&a)]).unwrap();
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], lines[2]);
        assert_eq!(table.to_text().lines().count(), 3);
    }

    fn arb_series() -> impl Strategy<Value = (Vec<Vec<u64>>, usize, u64)> {
        (1usize..3, 6usize..30, 0u64..3).prop_flat_map(|(b, rows, delay)| {
            (
                prop::collection::vec(prop::collection::vec(0u64..12, rows), b),
                1..rows,
                Just(delay),
            )
        })
    }

    proptest! {
        #[test]
        fn conservation_and_oracle_bound((cols, t0, delay) in arb_series()) {
            let refs: Vec<&[u64]> = cols.iter().map(Vec::as_slice).collect();
            let s = series(&refs);
            let p = prices(cols.len());
            let input = SimInput { series: &s, prices: &p, eval_start: t0 };
            let cfg = SimConfig { launch_delay_ticks: delay, ..SimConfig::default() };
            let oracle = run(input, &Policy::Oracle, &cfg).unwrap();
            let policies = [
                Policy::OnDemand,
                Policy::StaticMax,
                Policy::Ladder { rungs: vec![vec![2, 5, 10, 20]], lookback: 3 },
                Policy::Oracle,
            ];
            for policy in &policies {
                let r = run(input, policy, &cfg).unwrap();
                for row in &r.per_tick {
                    prop_assert_eq!(row.issued, row.ready + row.launching + row.released);
                    if delay <= 1 && row.tick + 1 < s.rows() {
                        // capacity available at the next tick covers current demand
                        prop_assert!(row.ready + row.launching >= row.demand);
                    }
                }
                if delay <= 1 {
                    prop_assert!(r.total_cost >= oracle.total_cost);
                }
                prop_assert_eq!(&r, &run(input, policy, &cfg).unwrap());
            }
            if delay == 1 {
                prop_assert_eq!(oracle.violation_ticks, 0);
            }
        }
    }
}
