use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{TransformerConfig, TransformerModel};
use crate::error::{Error, Result};
use crate::forecast::window::WindowDataset;
use crate::forecast::Matrix;

/// `d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`; `step` starts at 1.
pub fn lr_schedule(step: usize, d_model: usize, warmup_steps: usize) -> f64 {
    let s = step.max(1) as f64;
    (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup_steps as f64).powf(-1.5))
}

/// Stream offsets so initialization, shuffling and dropout never share draws.
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
}

impl Adam {
    fn new(n: usize, config: &TransformerConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_epsilon,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean mini-batch loss of every step.
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// CSV with `step,lr,loss` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,loss\n");
        for (i, (lr, loss)) in self.learning_rates.iter().zip(&self.losses).enumerate() {
            s.push_str(&format!("{},{lr},{loss}\n", i + 1));
        }
        s
    }
}

/// Mean squared error over samples and buckets, and its gradient, dropout off.
pub fn loss_and_gradient(model: &TransformerModel, data: &WindowDataset, samples: &[usize]) -> (f64, Vec<f64>) {
    let mut grads = vec![0.0; model.params.len()];
    let weight = 1.0 / samples.len().max(1) as f64;
    let mut loss = 0.0;
    for &i in samples {
        loss += sample_step(model, data, i, weight, &mut grads, None);
    }
    (loss, grads)
}

fn sample_step(
    model: &TransformerModel,
    data: &WindowDataset,
    i: usize,
    weight: f64,
    grads: &mut [f64],
    rng: Option<&mut ChaCha8Rng>,
) -> f64 {
    let l = data.window_len;
    let b = data.buckets();
    let input = data.input(i);
    let last = &input[(l - 1) * b..];
    model.sample_loss_grad(input, l, last, 1, data.target(i), weight, grads, rng)
}

/// Trains a freshly initialized model on `data` for `config.train_steps` steps.
pub fn train(config: &TransformerConfig, data: &WindowDataset) -> Result<(TransformerModel, TrainLog)> {
    let mut model = TransformerModel::new(config.clone(), data.buckets())?;
    let log = train_model(&mut model, data)?;
    Ok((model, log))
}

/// Continues training `model` with its own config.
pub fn train_model(model: &mut TransformerModel, data: &WindowDataset) -> Result<TrainLog> {
    let config = model.config.clone();
    if data.is_empty() {
        return Err(Error::Empty("training windows"));
    }
    if data.window_len != config.window_len {
        return Err(Error::InvalidConfig(format!(
            "dataset window {} differs from model window {}",
            data.window_len, config.window_len
        )));
    }
    if data.buckets() != model.buckets {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} buckets, model {}",
            data.buckets(),
            model.buckets
        )));
    }
    model.normalization = Some(data.normalization.clone());
    let mut shuffle_rng = rng_stream(config.seed, SHUFFLE_STREAM);
    let mut dropout_rng = rng_stream(config.seed, DROPOUT_STREAM);
    let mut adam = Adam::new(model.params.len(), &config);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let batch = config.batch_size.min(data.len());
    let mut grads = vec![0.0; model.params.len()];
    let mut log = TrainLog::default();

    for step in 1..=config.train_steps {
        grads.fill(0.0);
        let mut loss = 0.0;
        for _ in 0..batch {
            if cursor == order.len() {
                order = (0..data.len()).collect();
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            loss += sample_step(model, data, i, 1.0 / batch as f64, &mut grads, Some(&mut dropout_rng));
        }
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        let lr = lr_schedule(step, config.d_model, config.warmup_steps);
        adam.step(&mut model.params.data, &grads, lr);
        log.losses.push(loss);
        log.learning_rates.push(lr);
    }
    Ok(log)
}

/// Normalized one-step predictions for every sample of `data`, dropout off.
pub fn predict_dataset(model: &TransformerModel, data: &WindowDataset) -> Result<Matrix> {
    let mut out = Matrix::zeros(0, data.buckets());
    for i in 0..data.len() {
        let y = model.forward(&data.input_matrix(i))?;
        out.push_row(y.prediction());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::window::make_windows;

    #[test]
    fn schedule_values() {
        let peak = lr_schedule(5000, 64, 5000);
        assert!((peak - 1.0 / (8.0 * 5000f64.sqrt())).abs() < 1e-15);
        assert!((peak - 1.7678e-3).abs() < 1e-7);
        assert!(lr_schedule(1, 64, 5000) < lr_schedule(2, 64, 5000));
        assert!(lr_schedule(6000, 64, 5000) < lr_schedule(5001, 64, 5000));
        assert!(lr_schedule(4999, 64, 5000) < peak && lr_schedule(5001, 64, 5000) < peak);
    }

    fn tiny(seed: u64) -> TransformerConfig {
        TransformerConfig {
            d_model: 8,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            dropout: 0.1,
            warmup_steps: 20,
            periods: vec![6],
            window_len: 6,
            batch_size: 4,
            train_steps: 30,
            seed,
            ..TransformerConfig::default()
        }
    }

    fn sine(rows: usize, period: usize) -> Matrix {
        let v = (0..rows)
            .flat_map(|t| {
                let x = (2.0 * std::f64::consts::PI * t as f64 / period as f64).sin();
                [5.0 + 4.0 * x, 3.0 - 2.0 * x]
            })
            .collect();
        Matrix::from_vec(rows, 2, v)
    }

    #[test]
    fn same_seed_same_parameters() {
        let (train_set, _) = make_windows(&sine(60, 6), 6, 0.8).unwrap();
        let (a, la) = train(&tiny(3), &train_set).unwrap();
        let (b, lb) = train(&tiny(3), &train_set).unwrap();
        assert_eq!(a.params.data, b.params.data);
        assert_eq!(la, lb);
        let (c, _) = train(&tiny(4), &train_set).unwrap();
        assert_ne!(a.params.data, c.params.data);
    }

    #[test]
    fn constant_series_loss_vanishes() {
        let series = Matrix::from_vec(40, 2, vec![3.0; 80]);
        let (train_set, _) = make_windows(&series, 6, 0.9).unwrap();
        let config = TransformerConfig {
            dropout: 0.0,
            train_steps: 200,
            warmup_steps: 50,
            ..tiny(1)
        };
        let (_, log) = train(&config, &train_set).unwrap();
        assert!(log.final_loss().unwrap() < 1e-6, "loss {:?}", log.final_loss());
    }

    #[test]
    fn non_finite_loss_aborts_with_step() {
        let series = Matrix::from_vec(40, 1, (0..40).map(|t| t as f64).collect());
        let (mut train_set, _) = make_windows(&series, 6, 0.9).unwrap();
        train_set.series.set(10, 0, f64::NAN);
        let err = train(&tiny(0), &train_set).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { step: 1.. }), "{err:?}");
    }
}
