//! Accuracy and overprovisioning metrics over flattened prediction sequences.

use crate::error::{Error, Result};

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            found: yhat.len(),
        });
    }
    Ok(())
}

/// Mean squared error over all scalar components. Empty input gives 0.
pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / y.len() as f64)
}

/// Squared error summed only where the prediction overshoots, divided by the
/// full component count, so `pmse <= mse` always holds.
pub fn pmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = y
        .iter()
        .zip(yhat)
        .filter(|(a, b)| b > a)
        .map(|(a, b)| (a - b) * (a - b))
        // an empty f64 sum is -0.0
        .fold(0.0, |s, v| s + v);
    Ok(sum / y.len() as f64)
}
