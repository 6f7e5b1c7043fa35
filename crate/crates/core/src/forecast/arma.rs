//! ARIMA(p, 1, q) with a constant, estimated by Hannan-Rissanen least squares.
//!
//! The series is differenced once. A long autoregression of order `4 * max(p, q)`
//! supplies innovation estimates; the ARMA coefficients then come from ordinary
//! least squares of the differenced series on its own `p` lags and `q` lags of
//! those innovations. Forecasts reuse the long autoregression to estimate recent
//! innovations, which keeps the recursion stable even for non-invertible MA fits.

use std::ops::Range;

use super::{check_targets, Forecaster, Matrix};
use crate::error::{Error, Result};

const RIDGE_FACTOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ArmaFit {
    pub p: usize,
    pub q: usize,
    pub constant: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    /// Constant and coefficients of the long autoregression (empty when `q == 0`).
    pub long_ar: Vec<f64>,
    /// Whether either regression needed ridge regularization.
    pub ridge_used: bool,
}

/// Least squares via the normal equations, falling back to a ridge term when the
/// Cholesky factorization finds them singular. Returns `(coefficients, ridge_used)`.
fn least_squares(x: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, bool) {
    let k = x.first().map_or(0, Vec::len);
    let mut xtx = vec![0.0; k * k];
    let mut xty = vec![0.0; k];
    for (row, &target) in x.iter().zip(y) {
        for i in 0..k {
            xty[i] += row[i] * target;
            for j in 0..=i {
                xtx[i * k + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            xtx[j * k + i] = xtx[i * k + j];
        }
    }
    if let Some(beta) = cholesky_solve(&xtx, &xty, k) {
        return (beta, false);
    }
    let scale = (0..k).map(|i| xtx[i * k + i]).fold(0.0, f64::max).max(1.0);
    for i in 0..k {
        xtx[i * k + i] += RIDGE_FACTOR * scale;
    }
    let beta = cholesky_solve(&xtx, &xty, k).unwrap_or_else(|| vec![0.0; k]);
    (beta, true)
}

fn cholesky_solve(a: &[f64], b: &[f64], k: usize) -> Option<Vec<f64>> {
    let max_diag = (0..k).map(|i| a[i * k + i]).fold(0.0, f64::max);
    let tol = max_diag * 1e-12;
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if !(s > tol) {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    let mut z = vec![0.0; k];
    for i in 0..k {
        let s: f64 = (0..i).map(|p| l[i * k + p] * z[p]).sum();
        z[i] = (b[i] - s) / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|p| l[p * k + i] * x[p]).sum();
        x[i] = (z[i] - s) / l[i * k + i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn lag(values: &[f64], t: usize, l: usize) -> f64 {
    if t >= l {
        values[t - l]
    } else {
        0.0
    }
}

/// Innovations of `z` under the long autoregression `[c, a_1..a_k]`.
fn long_ar_residuals(z: &[f64], long_ar: &[f64]) -> Vec<f64> {
    let k = long_ar.len().saturating_sub(1);
    z.iter()
        .enumerate()
        .map(|(t, &zt)| {
            if t < k {
                return 0.0;
            }
            let pred = long_ar[0] + (1..=k).map(|i| long_ar[i] * z[t - i]).sum::<f64>();
            zt - pred
        })
        .collect()
}

/// Fits ARIMA(p, 1, q) with constant to one column.
pub fn arma_fit(column: &[f64], p: usize, q: usize) -> Result<ArmaFit> {
    let needed = (10 * (p + q)).max(p + q + 3);
    if column.len() < needed {
        return Err(Error::SeriesTooShort {
            rows: column.len(),
            needed,
        });
    }
    let z: Vec<f64> = column.windows(2).map(|w| w[1] - w[0]).collect();
    let mut ridge_used = false;

    let (long_ar, resid, start) = if q > 0 {
        let k = 4 * p.max(q);
        let k = k.min(z.len().saturating_sub(2)).max(1);
        let rows: Vec<Vec<f64>> = (k..z.len())
            .map(|t| std::iter::once(1.0).chain((1..=k).map(|i| z[t - i])).collect())
            .collect();
        let (coef, ridge) = least_squares(&rows, &z[k..]);
        ridge_used |= ridge;
        let resid = long_ar_residuals(&z, &coef);
        (coef, resid, (k + q).max(p))
    } else {
        (Vec::new(), vec![0.0; z.len()], p)
    };
    if start >= z.len() {
        return Err(Error::SeriesTooShort {
            rows: column.len(),
            needed: start + 2,
        });
    }

    let rows: Vec<Vec<f64>> = (start..z.len())
        .map(|t| {
            std::iter::once(1.0)
                .chain((1..=p).map(|i| z[t - i]))
                .chain((1..=q).map(|j| resid[t - j]))
                .collect()
        })
        .collect();
    let (coef, ridge) = least_squares(&rows, &z[start..]);
    ridge_used |= ridge;
    Ok(ArmaFit {
        p,
        q,
        constant: coef[0],
        ar: coef[1..=p].to_vec(),
        ma: coef[p + 1..].to_vec(),
        long_ar,
        ridge_used,
    })
}

impl ArmaFit {
    /// One-step forecasts: element `t - 1` forecasts `column[t]` from `column[..t]`,
    /// for `t` in `1..=n` (the last element is out of sample). Clamped at zero.
    pub fn one_step(&self, column: &[f64]) -> Vec<f64> {
        if column.is_empty() {
            return Vec::new();
        }
        let z: Vec<f64> = column.windows(2).map(|w| w[1] - w[0]).collect();
        let resid = if self.q > 0 {
            long_ar_residuals(&z, &self.long_ar)
        } else {
            vec![0.0; z.len()]
        };
        // forecast of z[t] uses z[..t] and resid[..t]
        (0..=z.len())
            .map(|t| {
                let zhat = self.constant
                    + (1..=self.p).map(|i| self.ar[i - 1] * lag(&z, t, i)).sum::<f64>()
                    + (1..=self.q).map(|j| self.ma[j - 1] * lag(&resid, t, j)).sum::<f64>();
                (column[t] + zhat).max(0.0)
            })
            .collect()
    }
}

/// Differenced ARMA per bucket column.
#[derive(Debug, Clone)]
pub struct DifferencedArma {
    pub p: usize,
    pub q: usize,
    pub fits: Vec<ArmaFit>,
}

impl DifferencedArma {
    pub fn new(p: usize, q: usize) -> Self {
        Self { p, q, fits: Vec::new() }
    }

    pub fn ridge_used(&self) -> bool {
        self.fits.iter().any(|f| f.ridge_used)
    }
}

impl Forecaster for DifferencedArma {
    fn name(&self) -> &str {
        "arima"
    }

    fn fit(&mut self, train: &Matrix) -> Result<()> {
        self.fits = (0..train.cols())
            .map(|c| arma_fit(&train.column(c), self.p, self.q))
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn min_history(&self) -> usize {
        1
    }

    fn predict_next(&self, history: &Matrix) -> Result<Vec<f64>> {
        self.check_fitted(history.cols())?;
        Ok((0..history.cols())
            .map(|c| self.fits[c].one_step(&history.column(c)).last().copied().unwrap_or(0.0))
            .collect())
    }

    fn predict_range(&self, series: &Matrix, targets: Range<usize>) -> Result<Matrix> {
        check_targets(self.min_history(), series, &targets)?;
        self.check_fitted(series.cols())?;
        let mut out = Matrix::zeros(targets.len(), series.cols());
        for c in 0..series.cols() {
            let col = series.column(c);
            let preds = self.fits[c].one_step(&col[..targets.end]);
            for (k, t) in targets.clone().enumerate() {
                out.set(k, c, preds[t - 1]);
            }
        }
        Ok(out)
    }
}

impl DifferencedArma {
    fn check_fitted(&self, cols: usize) -> Result<()> {
        if self.fits.len() != cols {
            return Err(Error::InvalidConfig(format!(
                "arima fitted on {} columns, asked for {cols}",
                self.fits.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn noiseless_ar1_coefficient() {
        let mut x = vec![100.0];
        for _ in 0..199 {
            let last = *x.last().unwrap();
            x.push(0.5 * last);
        }
        let fit = arma_fit(&x, 1, 0).unwrap();
        assert!((fit.ar[0] - 0.5).abs() < 1e-3, "ar = {:?}", fit.ar);
    }

    #[test]
    fn noisy_ar1_in_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut z = 0.0;
        let mut x = vec![50.0];
        for _ in 0..5000 {
            z = 0.5 * z + noise.sample(&mut rng);
            let last = *x.last().unwrap();
            x.push(last + z);
        }
        let fit = arma_fit(&x, 1, 1).unwrap();
        assert!((fit.ar[0] - 0.5).abs() < 0.1, "ar = {:?}", fit.ar);
        assert!(fit.ma[0].abs() < 0.1, "ma = {:?}", fit.ma);
    }

    #[test]
    fn random_walk_with_drift_forecasts_last_plus_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = vec![1000.0];
        for _ in 0..3000 {
            let last = *x.last().unwrap();
            x.push(last + 0.3 + noise.sample(&mut rng));
        }
        let fit = arma_fit(&x, 7, 7).unwrap();
        assert!((fit.constant - 0.3).abs() < 0.15, "constant {}", fit.constant);
        let next = *fit.one_step(&x).last().unwrap();
        let last = *x.last().unwrap();
        assert!((next - (last + fit.constant)).abs() < 0.6, "next {next}, last {last}");
    }

    #[test]
    fn constant_series_uses_ridge_and_forecasts_constant() {
        let x = vec![6.0; 200];
        let fit = arma_fit(&x, 7, 7).unwrap();
        assert!(fit.ridge_used);
        assert!(fit.one_step(&x).iter().all(|p| (p - 6.0).abs() < 1e-9));
    }

    #[test]
    fn too_short() {
        assert!(matches!(arma_fit(&[1.0; 100], 7, 7), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn forecaster_range_matches_next_step() {
        let col: Vec<f64> = (0..400).map(|t| 20.0 + ((t * 13) % 17) as f64).collect();
        let series = Matrix::from_vec(400, 1, col);
        let mut m = DifferencedArma::new(2, 2);
        m.fit(&series.slice_rows(0..300)).unwrap();
        let range = m.predict_range(&series, 300..400).unwrap();
        for t in [300, 350, 399] {
            let single = m.predict_next(&series.slice_rows(0..t)).unwrap();
            assert!((single[0] - range.get(t - 300, 0)).abs() < 1e-9);
        }
    }
}
