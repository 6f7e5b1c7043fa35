use super::model::TransformerModel;
use crate::forecast::Matrix;

/// Step of the fourth-order central difference. Large enough that rounding
/// noise (about `1e-12` here) stays well under `RELATIVE_FLOOR * 1e-4`.
pub const FD_STEP: f64 = 1e-3;
/// Gradients whose magnitude is below this are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// Name of the tensor holding the worst parameter.
    pub worst_tensor: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Single-step squared-error loss and its analytic gradient, scaled by `scale`,
/// with dropout disabled.
pub fn loss_gradient(model: &TransformerModel, window: &Matrix, target: &[f64], scale: f64) -> (f64, Vec<f64>) {
    let (l, b) = (window.rows(), window.cols());
    let last = &window.data()[(l - 1) * b..];
    let mut grads = vec![0.0; model.params.len()];
    let loss = model.sample_loss_grad(window.data(), l, last, 1, target, scale, &mut grads, None);
    (loss, grads)
}

fn loss_only(model: &TransformerModel, window: &Matrix, target: &[f64]) -> f64 {
    let (l, b) = (window.rows(), window.cols());
    let last = &window.data()[(l - 1) * b..];
    let (y, _) = model.run(window.data(), l, last, 1, None);
    y.iter().zip(target).map(|(a, t)| (a - t) * (a - t)).sum::<f64>() / y.len() as f64
}

/// Compares the analytic gradient of every parameter against fourth-order
/// central finite differences. Relative error is `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn gradient_check(model: &TransformerModel, window: &Matrix, target: &[f64]) -> GradientCheck {
    let (_, analytic) = loss_gradient(model, window, target, 1.0);
    let mut probe = model.clone();
    let mut numeric = vec![0.0; analytic.len()];
    for (i, n) in numeric.iter_mut().enumerate() {
        let orig = probe.params.data[i];
        let mut at = |k: f64| {
            probe.params.data[i] = orig + k * FD_STEP;
            loss_only(&probe, window, target)
        };
        *n = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * FD_STEP);
        probe.params.data[i] = orig;
    }
    let mut worst = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_FLOOR);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    let worst_tensor = model
        .params
        .specs()
        .iter()
        .find(|s| s.span().contains(&worst.1))
        .map(|s| s.name.clone())
        .unwrap_or_default();
    GradientCheck {
        max_relative_error: worst.0,
        worst_tensor,
        analytic,
        numeric,
    }
}
