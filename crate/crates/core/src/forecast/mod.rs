//! One-step-ahead forecasting of bucket-count series.
//!
//! Every predictor implements [`Forecaster`]: it is fitted on the training split
//! (raw counts) and then asked for the next row given the history observed so far.
//! Outputs are non-negative rationals; rounding to instance counts is left to the
//! autoscaler.

use std::ops::Range;

use crate::error::{Error, Result};

pub mod arma;
pub mod holt_winters;
mod matrix;
pub mod metrics;
pub mod saved;
pub mod static_max;
pub mod transformer;
pub mod window;

pub use matrix::Matrix;

pub trait Forecaster: Send + Sync {
    fn name(&self) -> &str;

    fn fit(&mut self, train: &Matrix) -> Result<()>;

    /// Rows of history required before the first prediction.
    fn min_history(&self) -> usize;

    /// Forecast of the row following `history`, clamped at zero.
    fn predict_next(&self, history: &Matrix) -> Result<Vec<f64>>;

    /// Row `t` of the result forecasts `series.row(t)` from rows `..t`, for every
    /// `t` in `targets`.
    fn predict_range(&self, series: &Matrix, targets: Range<usize>) -> Result<Matrix> {
        check_targets(self.min_history(), series, &targets)?;
        let mut out = Matrix::zeros(0, series.cols());
        for t in targets {
            out.push_row(&self.predict_next(&series.slice_rows(0..t))?);
        }
        Ok(out)
    }
}

pub(crate) fn check_targets(min_history: usize, series: &Matrix, targets: &Range<usize>) -> Result<()> {
    if targets.start < min_history.max(1) {
        return Err(Error::InsufficientHistory {
            needed: min_history.max(1),
            available: targets.start,
        });
    }
    if targets.end > series.rows() {
        return Err(Error::ShapeMismatch(format!(
            "target rows up to {} requested from a series of {} rows",
            targets.end,
            series.rows()
        )));
    }
    Ok(())
}

/// Per-column min/max scaling into `[0, 1]`, fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit(data: &Matrix) -> Self {
        let mut min = vec![f64::INFINITY; data.cols()];
        let mut max = vec![f64::NEG_INFINITY; data.cols()];
        for r in 0..data.rows() {
            for (c, &v) in data.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        for c in 0..data.cols() {
            if !min[c].is_finite() {
                min[c] = 0.0;
                max[c] = 0.0;
            }
        }
        Self { min, max }
    }

    /// Constant columns (`max == min`) map to 0.
    pub fn normalize(&self, col: usize, v: f64) -> f64 {
        let span = self.max[col] - self.min[col];
        if span > 0.0 {
            (v - self.min[col]) / span
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, col: usize, v: f64) -> f64 {
        let span = self.max[col] - self.min[col];
        if span > 0.0 {
            v * span + self.min[col]
        } else {
            self.min[col]
        }
    }

    pub fn normalize_matrix(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for r in 0..m.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = self.normalize(c, *v);
            }
        }
        out
    }

    pub fn denormalize_matrix(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for r in 0..m.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = self.denormalize(c, *v);
            }
        }
        out
    }
}

pub(crate) fn clamp_non_negative(v: &mut [f64]) {
    for x in v {
        if !(*x > 0.0) {
            *x = 0.0;
        }
    }
}
