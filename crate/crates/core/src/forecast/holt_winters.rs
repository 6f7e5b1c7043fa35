//! Additive Holt-Winters (triple exponential smoothing), one column at a time.
//!
//! ```text
//! forecast: y^_t = L_{t-1} + T_{t-1} + S_{t-m}
//! level:    L_t  = a (y_t - S_{t-m}) + (1 - a)(L_{t-1} + T_{t-1})
//! trend:    T_t  = b (L_t - L_{t-1}) + (1 - b) T_{t-1}
//! season:   S_t  = g (y_t - L_t) + (1 - g) S_{t-m}
//! ```
//!
//! Additive seasonality is used because bucket counts regularly reach zero.

use std::ops::Range;

use super::{check_targets, Forecaster, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoltWintersParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Season length in ticks.
    pub period: usize,
}

impl HoltWintersParams {
    /// Weekly season of five-minute ticks.
    pub fn weekly() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.001,
            gamma: 0.3,
            period: 2016,
        }
    }

    /// Daily season of five-minute ticks.
    pub fn daily() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.005,
            gamma: 0.3,
            period: 288,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!("holt-winters {name} = {v} outside (0, 1)")));
            }
        }
        if self.period == 0 {
            return Err(Error::InvalidConfig("holt-winters period must be positive".into()));
        }
        Ok(())
    }
}

/// One-step forecasts for indices `m..=n` of a column of length `n`.
///
/// Element `k` forecasts index `m + k`; the last element is the out-of-sample
/// forecast for index `n`. Initialization: level is the first-season mean, trend
/// the difference of the first two season means divided by `m`, seasonals the
/// first-season deviations from its mean.
pub fn holt_winters_one_step(column: &[f64], params: HoltWintersParams) -> Result<Vec<f64>> {
    params.validate()?;
    let m = params.period;
    if column.len() < 2 * m {
        return Err(Error::SeriesTooShort {
            rows: column.len(),
            needed: 2 * m,
        });
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&column[..m]);
    let second = mean(&column[m..2 * m]);
    let mut level = first;
    let mut trend = (second - first) / m as f64;
    let mut season: Vec<f64> = column[..m].iter().map(|y| y - first).collect();

    let HoltWintersParams { alpha, beta, gamma, .. } = params;
    let mut out = Vec::with_capacity(column.len() - m + 1);
    for (t, &y) in column.iter().enumerate().skip(m) {
        let phase = t % m;
        out.push(level + trend + season[phase]);
        let prev = level;
        level = alpha * (y - season[phase]) + (1.0 - alpha) * (level + trend);
        trend = beta * (level - prev) + (1.0 - beta) * trend;
        season[phase] = gamma * (y - level) + (1.0 - gamma) * season[phase];
    }
    out.push(level + trend + season[column.len() % m]);
    Ok(out)
}

/// Holt-Winters applied independently to every bucket column.
#[derive(Debug, Clone)]
pub struct HoltWinters {
    pub params: HoltWintersParams,
}

impl HoltWinters {
    pub fn new(params: HoltWintersParams) -> Self {
        Self { params }
    }
}

impl Forecaster for HoltWinters {
    fn name(&self) -> &str {
        "holt-winters"
    }

    fn fit(&mut self, train: &Matrix) -> Result<()> {
        self.params.validate()?;
        if train.rows() < 2 * self.params.period {
            return Err(Error::SeriesTooShort {
                rows: train.rows(),
                needed: 2 * self.params.period,
            });
        }
        Ok(())
    }

    fn min_history(&self) -> usize {
        2 * self.params.period
    }

    fn predict_next(&self, history: &Matrix) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(history.cols());
        for c in 0..history.cols() {
            let preds = holt_winters_one_step(&history.column(c), self.params)?;
            out.push(preds.last().copied().unwrap_or(0.0).max(0.0));
        }
        Ok(out)
    }

    fn predict_range(&self, series: &Matrix, targets: Range<usize>) -> Result<Matrix> {
        check_targets(self.min_history(), series, &targets)?;
        let mut out = Matrix::zeros(targets.len(), series.cols());
        let m = self.params.period;
        for c in 0..series.cols() {
            let col = series.column(c);
            let preds = holt_winters_one_step(&col[..targets.end - 1], self.params)?;
            for (k, t) in targets.clone().enumerate() {
                out.set(k, c, preds[t - m].max(0.0));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(period: usize) -> HoltWintersParams {
        HoltWintersParams {
            alpha: 0.5,
            beta: 0.001,
            gamma: 0.3,
            period,
        }
    }

    #[test]
    fn constant_series_forecasts_constant() {
        let col = vec![4.0; 40];
        let preds = holt_winters_one_step(&col, params(6)).unwrap();
        assert!(preds.iter().all(|p| (p - 4.0).abs() < 1e-12));
    }

    #[test]
    fn periodic_series_is_tracked_exactly() {
        let m = 12;
        let truth = |t: usize| 10.0 + 3.0 * (2.0 * std::f64::consts::PI * t as f64 / m as f64).sin();
        let col: Vec<f64> = (0..10 * m).map(truth).collect();
        let preds = holt_winters_one_step(&col, params(m)).unwrap();
        for (k, p) in preds.iter().enumerate().skip(m) {
            assert!((p - truth(m + k)).abs() < 1e-6, "index {}", m + k);
        }
    }

    #[test]
    fn ramp_error_vanishes_with_unit_season() {
        let slope = 0.7;
        let col: Vec<f64> = (0..200).map(|t| 5.0 + slope * t as f64).collect();
        let p = HoltWintersParams {
            alpha: 0.5,
            beta: 0.1,
            gamma: 0.3,
            period: 1,
        };
        let preds = holt_winters_one_step(&col, p).unwrap();
        let late: f64 = (150..199).map(|t| (preds[t - 1] - col[t]).abs()).fold(0.0, f64::max);
        assert!(late < 1e-6, "late error {late}");
    }

    #[test]
    fn too_short_column() {
        assert!(matches!(
            holt_winters_one_step(&[1.0; 11], params(6)),
            Err(Error::SeriesTooShort { needed: 12, .. })
        ));
        let bad = HoltWintersParams { alpha: 1.0, ..params(2) };
        assert!(holt_winters_one_step(&[1.0; 10], bad).is_err());
    }

    #[test]
    fn range_matches_next_step_calls() {
        let col: Vec<f64> = (0..60).map(|t| ((t * 7) % 11) as f64).collect();
        let series = Matrix::from_vec(60, 1, col);
        let hw = HoltWinters::new(params(5));
        let range = hw.predict_range(&series, 20..60).unwrap();
        for t in 20..60 {
            let single = hw.predict_next(&series.slice_rows(0..t)).unwrap();
            assert!((single[0] - range.get(t - 20, 0)).abs() < 1e-12);
        }
    }
}
