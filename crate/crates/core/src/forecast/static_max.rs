use super::{Forecaster, Matrix};
use crate::error::{Error, Result};

/// Maximum static allocation: always forecasts the per-column training maximum.
#[derive(Debug, Clone, Default)]
pub struct StaticMax {
    max: Option<Vec<f64>>,
}

impl StaticMax {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_max(max: Vec<f64>) -> Self {
        Self { max: Some(max) }
    }

    pub fn max(&self) -> Option<&[f64]> {
        self.max.as_deref()
    }
}

impl Forecaster for StaticMax {
    fn name(&self) -> &str {
        "static"
    }

    fn fit(&mut self, train: &Matrix) -> Result<()> {
        if train.rows() == 0 {
            return Err(Error::Empty("training split"));
        }
        let mut max = train.column_max();
        super::clamp_non_negative(&mut max);
        self.max = Some(max);
        Ok(())
    }

    fn min_history(&self) -> usize {
        0
    }

    fn predict_next(&self, _history: &Matrix) -> Result<Vec<f64>> {
        self.max
            .clone()
            .ok_or_else(|| Error::InvalidConfig("static predictor used before fit".into()))
    }

    fn predict_range(&self, series: &Matrix, targets: std::ops::Range<usize>) -> Result<Matrix> {
        let max = self.predict_next(series)?;
        let mut out = Matrix::zeros(0, max.len());
        for _ in targets {
            out.push_row(&max);
        }
        Ok(out)
    }
}
