//! Encoder-decoder Transformer for one-step bucket-count forecasting, written
//! directly against flat `f64` buffers with hand-derived backward passes.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod model;
mod ops;
mod train;

use std::fmt::Write as _;

pub use gradcheck::{gradient_check, loss_gradient, GradientCheck};
pub use model::{positional_encoding, Attention, ForwardOutput, TransformerConfig, TransformerModel};
pub use train::{loss_and_gradient, lr_schedule, predict_dataset, train, train_model, TrainLog};

use super::window::WindowDataset;
use super::{Forecaster, Matrix, MinMax};
use crate::error::{Error, Result};

/// `layer,head,query_pos,key_pos,weight` rows for the encoder self-attention.
pub fn attention_csv(attention: &Attention) -> String {
    let mut s = String::from("layer,head,query_pos,key_pos,weight\n");
    for (layer, heads) in attention.encoder.iter().enumerate() {
        for (head, m) in heads.iter().enumerate() {
            for q in 0..m.rows() {
                for (k, w) in m.row(q).iter().enumerate() {
                    let _ = writeln!(s, "{layer},{head},{q},{k},{w}");
                }
            }
        }
    }
    s
}

/// Training windows covering every target of `train` (raw counts).
pub fn training_windows(train: &Matrix, window_len: usize) -> Result<WindowDataset> {
    if train.rows() <= window_len {
        return Err(Error::SeriesTooShort {
            rows: train.rows(),
            needed: window_len + 1,
        });
    }
    let normalization = MinMax::fit(train);
    Ok(WindowDataset {
        window_len,
        series: normalization.normalize_matrix(train),
        targets: (window_len..train.rows()).collect(),
        normalization,
    })
}

/// [`Forecaster`] adapter: fits on raw counts, predicts denormalized counts.
#[derive(Debug, Clone)]
pub struct TransformerForecaster {
    pub config: TransformerConfig,
    pub model: Option<TransformerModel>,
    pub log: TrainLog,
}

impl TransformerForecaster {
    pub fn new(config: TransformerConfig) -> Self {
        Self {
            config,
            model: None,
            log: TrainLog::default(),
        }
    }

    pub fn from_model(model: TransformerModel) -> Self {
        Self {
            config: model.config.clone(),
            model: Some(model),
            log: TrainLog::default(),
        }
    }

    fn model(&self) -> Result<&TransformerModel> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("transformer has not been trained".into()))
    }
}

impl Forecaster for TransformerForecaster {
    fn name(&self) -> &str {
        "transformer"
    }

    fn fit(&mut self, train_rows: &Matrix) -> Result<()> {
        let data = training_windows(train_rows, self.config.window_len)?;
        let (model, log) = train(&self.config, &data)?;
        self.model = Some(model);
        self.log = log;
        Ok(())
    }

    fn min_history(&self) -> usize {
        self.config.window_len
    }

    fn predict_next(&self, history: &Matrix) -> Result<Vec<f64>> {
        self.model()?.predict_counts(history)
    }
}
