//! Sliding-window datasets for one-step-ahead training and evaluation.

use super::{Matrix, MinMax};
use crate::error::{Error, Result};

/// Two days of five-minute ticks.
pub const DEFAULT_WINDOW_LEN: usize = 576;

/// Windows over a normalized series.
///
/// Sample `i` has input rows `targets[i] - window_len .. targets[i]` and target
/// row `targets[i]`. Rows are stored once; windows are contiguous slices of them.
#[derive(Debug, Clone)]
pub struct WindowDataset {
    pub window_len: usize,
    /// Whole normalized series (shared by the train and test splits).
    pub series: Matrix,
    pub targets: Vec<usize>,
    pub normalization: MinMax,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn buckets(&self) -> usize {
        self.series.cols()
    }

    /// Row-major `window_len x buckets` input of sample `i`.
    pub fn input(&self, i: usize) -> &[f64] {
        let t = self.targets[i];
        let b = self.series.cols();
        &self.series.data()[(t - self.window_len) * b..t * b]
    }

    pub fn input_matrix(&self, i: usize) -> Matrix {
        Matrix::from_vec(self.window_len, self.buckets(), self.input(i).to_vec())
    }

    pub fn target(&self, i: usize) -> &[f64] {
        self.series.row(self.targets[i])
    }
}

/// Splits windows chronologically, the first `train_fraction` of targets training.
///
/// At least one target lands on each side.
pub fn make_windows(series: &Matrix, window_len: usize, train_fraction: f64) -> Result<(WindowDataset, WindowDataset)> {
    check_len(series, window_len)?;
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidConfig(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let n_targets = series.rows() - window_len;
    let n_train = ((train_fraction * n_targets as f64).floor() as usize).clamp(1, n_targets - 1);
    make_windows_at(series, window_len, window_len + n_train)
}

/// Splits so that the first test target is row `first_test_row`.
pub fn make_windows_at(series: &Matrix, window_len: usize, first_test_row: usize) -> Result<(WindowDataset, WindowDataset)> {
    check_len(series, window_len)?;
    if first_test_row <= window_len || first_test_row >= series.rows() {
        return Err(Error::InvalidConfig(format!(
            "first test row {first_test_row} must lie in ({window_len}, {})",
            series.rows()
        )));
    }
    let normalization = MinMax::fit(&series.slice_rows(0..first_test_row));
    let normalized = normalization.normalize_matrix(series);
    let train = WindowDataset {
        window_len,
        series: normalized.clone(),
        targets: (window_len..first_test_row).collect(),
        normalization: normalization.clone(),
    };
    let test = WindowDataset {
        window_len,
        series: normalized,
        targets: (first_test_row..series.rows()).collect(),
        normalization,
    };
    Ok((train, test))
}

fn check_len(series: &Matrix, window_len: usize) -> Result<()> {
    if window_len == 0 {
        return Err(Error::InvalidConfig("window length must be positive".into()));
    }
    if series.rows() < window_len + 2 {
        return Err(Error::SeriesTooShort {
            rows: series.rows(),
            needed: window_len + 2,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(rows: usize) -> Matrix {
        Matrix::from_vec(rows, 1, (0..rows).map(|i| i as f64).collect())
    }

    #[test]
    fn chronological_split() {
        let (train, test) = make_windows(&ramp(10), 3, 5.0 / 7.0).unwrap();
        assert_eq!(train.targets, vec![3, 4, 5, 6, 7]);
        assert_eq!(test.targets, vec![8, 9]);
        assert!(test.targets[0] > *train.targets.last().unwrap());
        // input side of the first test window overlaps training rows
        assert_eq!(test.input(0).len(), 3);
        assert_eq!(train.target(0), [3.0 / 7.0]);
    }

    #[test]
    fn each_target_follows_its_window() {
        let (train, _) = make_windows(&ramp(12), 4, 0.5).unwrap();
        for i in 0..train.len() {
            let last = *train.input(i).last().unwrap();
            let next = train.target(i)[0];
            assert!((next - last - 1.0 / train.normalization.max[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn too_short() {
        assert!(matches!(make_windows(&ramp(10), 10, 0.5), Err(Error::SeriesTooShort { .. })));
        assert!(make_windows(&ramp(10), 9, 0.5).is_err());
        assert!(make_windows(&ramp(10), 8, 0.5).is_ok());
    }

    #[test]
    fn constant_series_normalizes_to_zero() {
        let s = Matrix::from_vec(8, 2, vec![4.0; 16]);
        let (train, test) = make_windows(&s, 3, 0.6).unwrap();
        assert!(train.series.data().iter().all(|&v| v == 0.0));
        assert!(test.input(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_round_trip() {
        let s = Matrix::from_rows(&[[1.0, 5.0], [3.0, 2.0], [2.5, 9.0]]);
        let n = MinMax::fit(&s);
        let back = n.denormalize_matrix(&n.normalize_matrix(&s));
        for (a, b) in s.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
