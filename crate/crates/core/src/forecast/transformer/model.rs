use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{add_into, apply_mask, dropout, AttentionCache, LayerNorm, LayerNormCache, Linear, MultiHeadAttention, ParamStore};
use crate::error::{Error, Result};
use crate::forecast::{Matrix, MinMax};

/// Sum of one sine per seasonal period, added to every embedding component at `pos`.
pub fn positional_encoding(pos: usize, periods: &[usize]) -> f64 {
    periods
        .iter()
        .map(|&p| (2.0 * PI * (pos % p) as f64 / p as f64).sin())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub warmup_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Seasonal periods of the positional encoding, in ticks.
    pub periods: Vec<usize>,
    pub window_len: usize,
    pub batch_size: usize,
    pub train_steps: usize,
    pub seed: u64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            encoder_layers: 6,
            decoder_layers: 6,
            dropout: 0.2,
            warmup_steps: 5000,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_epsilon: 1e-9,
            periods: vec![2016, 288],
            window_len: 576,
            batch_size: 32,
            train_steps: 10_000,
            seed: 0,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return bad("encoder and decoder need at least one layer".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.warmup_steps == 0 || self.window_len == 0 || self.batch_size == 0 {
            return bad("warmup_steps, window_len and batch_size must be positive".into());
        }
        if self.periods.is_empty() || self.periods.contains(&0) {
            return bad("periods must be a non-empty list of positive integers".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    linear: Linear,
    norm2: LayerNorm,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    linear: Linear,
    norm3: LayerNorm,
}

/// Encoder-decoder network over bucket-count windows.
///
/// Rows of the window are lifted to `d_model` by the input layer and shifted by the
/// periodic positional encoding. Each encoder layer is self-attention followed by a
/// position-wise linear map, every sub-layer wrapped in residual add and layer
/// normalization. The decoder starts from the last window row, adds masked
/// self-attention and cross-attention over the encoder output, and the output layer
/// maps its final state back to one count per bucket.
#[derive(Debug, Clone)]
pub struct TransformerModel {
    pub config: TransformerConfig,
    pub buckets: usize,
    pub params: ParamStore,
    /// Scaling of raw counts the model was trained on.
    pub normalization: Option<MinMax>,
    enc_in: Linear,
    dec_in: Linear,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    out: Linear,
}

/// Row-stochastic attention weights, indexed `[layer][head]`.
#[derive(Debug, Clone, Default)]
pub struct Attention {
    pub encoder: Vec<Vec<Matrix>>,
    pub decoder_self: Vec<Vec<Matrix>>,
    pub decoder_cross: Vec<Vec<Matrix>>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// One row per decoder position, `buckets` columns.
    pub outputs: Matrix,
    pub attention: Attention,
}

impl ForwardOutput {
    /// Forecast of the step following the window (last decoder position).
    pub fn prediction(&self) -> &[f64] {
        self.outputs.row(self.outputs.rows() - 1)
    }
}

struct EncoderCache {
    input: Vec<f64>,
    attn: AttentionCache,
    drop1: Option<Vec<f64>>,
    norm1: LayerNormCache,
    hidden: Vec<f64>,
    drop2: Option<Vec<f64>>,
    norm2: LayerNormCache,
}

struct DecoderCache {
    input: Vec<f64>,
    self_attn: AttentionCache,
    drop1: Option<Vec<f64>>,
    norm1: LayerNormCache,
    h1: Vec<f64>,
    cross: AttentionCache,
    drop2: Option<Vec<f64>>,
    norm2: LayerNormCache,
    h2: Vec<f64>,
    drop3: Option<Vec<f64>>,
    norm3: LayerNormCache,
}

pub(crate) struct Cache {
    enc_x: Vec<f64>,
    dec_x: Vec<f64>,
    l: usize,
    m: usize,
    enc_drop: Option<Vec<f64>>,
    dec_drop: Option<Vec<f64>>,
    encoder: Vec<EncoderCache>,
    enc_out: Vec<f64>,
    decoder: Vec<DecoderCache>,
    dec_out: Vec<f64>,
}

impl TransformerModel {
    /// Randomly initialized model for `buckets` input/output columns.
    pub fn new(config: TransformerConfig, buckets: usize) -> Result<Self> {
        let mut model = Self::layout(config, buckets)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        model.enc_in.init(&mut model.params, &mut rng);
        model.dec_in.init(&mut model.params, &mut rng);
        for l in &model.encoder {
            l.attn.init(&mut model.params, &mut rng);
            l.norm1.init(&mut model.params);
            l.linear.init(&mut model.params, &mut rng);
            l.norm2.init(&mut model.params);
        }
        for l in &model.decoder {
            l.self_attn.init(&mut model.params, &mut rng);
            l.norm1.init(&mut model.params);
            l.cross_attn.init(&mut model.params, &mut rng);
            l.norm2.init(&mut model.params);
            l.linear.init(&mut model.params, &mut rng);
            l.norm3.init(&mut model.params);
        }
        model.out.init(&mut model.params, &mut rng);
        Ok(model)
    }

    /// Model with every tensor allocated and zeroed.
    pub(crate) fn layout(config: TransformerConfig, buckets: usize) -> Result<Self> {
        config.validate()?;
        if buckets == 0 {
            return Err(Error::InvalidConfig("model needs at least one bucket".into()));
        }
        let d = config.d_model;
        let mut ps = ParamStore::default();
        let enc_in = Linear::new(&mut ps, "enc_in", buckets, d);
        let dec_in = Linear::new(&mut ps, "dec_in", buckets, d);
        let encoder = (0..config.encoder_layers)
            .map(|i| EncoderLayer {
                attn: MultiHeadAttention::new(&mut ps, &format!("enc{i}.attn"), d, config.heads),
                norm1: LayerNorm::new(&mut ps, &format!("enc{i}.norm1"), d),
                linear: Linear::new(&mut ps, &format!("enc{i}.linear"), d, d),
                norm2: LayerNorm::new(&mut ps, &format!("enc{i}.norm2"), d),
            })
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|i| DecoderLayer {
                self_attn: MultiHeadAttention::new(&mut ps, &format!("dec{i}.self_attn"), d, config.heads),
                norm1: LayerNorm::new(&mut ps, &format!("dec{i}.norm1"), d),
                cross_attn: MultiHeadAttention::new(&mut ps, &format!("dec{i}.cross_attn"), d, config.heads),
                norm2: LayerNorm::new(&mut ps, &format!("dec{i}.norm2"), d),
                linear: Linear::new(&mut ps, &format!("dec{i}.linear"), d, d),
                norm3: LayerNorm::new(&mut ps, &format!("dec{i}.norm3"), d),
            })
            .collect();
        let out = Linear::new(&mut ps, "out", d, buckets);
        Ok(Self {
            config,
            buckets,
            params: ps,
            normalization: None,
            enc_in,
            dec_in,
            encoder,
            decoder,
            out,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the output layer weights so the prediction equals its bias.
    pub fn zero_output_weights(&mut self) {
        self.params.get_mut(self.out.weight).fill(0.0);
    }

    pub fn output_bias(&self) -> &[f64] {
        self.params.get(self.out.bias)
    }

    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        self.params.get_mut(self.out.bias)
    }

    fn check_window(&self, window: &Matrix) -> Result<()> {
        if window.cols() != self.buckets || window.rows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "window is {}x{}, model expects rows x {}",
                window.rows(),
                window.cols(),
                self.buckets
            )));
        }
        Ok(())
    }

    /// Single-step forward pass over a normalized window, dropout disabled.
    pub fn forward(&self, window: &Matrix) -> Result<ForwardOutput> {
        self.check_window(window)?;
        let last = window.rows() - 1;
        self.forward_with_decoder(window, &window.slice_rows(last..last + 1), None)
    }

    /// Forward pass with dropout active.
    pub fn forward_train(&self, window: &Matrix, rng: &mut ChaCha8Rng) -> Result<ForwardOutput> {
        self.check_window(window)?;
        let last = window.rows() - 1;
        self.forward_with_decoder(window, &window.slice_rows(last..last + 1), Some(rng))
    }

    /// Multi-step decoder: `decoder_inputs` row `i` sits at window position
    /// `window_len - rows + i` and output `i` may only depend on inputs `..=i`.
    pub fn forward_with_decoder(
        &self,
        window: &Matrix,
        decoder_inputs: &Matrix,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        self.check_window(window)?;
        if decoder_inputs.cols() != self.buckets || decoder_inputs.rows() == 0 || decoder_inputs.rows() > window.rows() {
            return Err(Error::ShapeMismatch(format!(
                "decoder input is {}x{}, expected 1..={} rows x {}",
                decoder_inputs.rows(),
                decoder_inputs.cols(),
                window.rows(),
                self.buckets
            )));
        }
        let (y, cache) = self.run(window.data(), window.rows(), decoder_inputs.data(), decoder_inputs.rows(), rng);
        Ok(ForwardOutput {
            outputs: Matrix::from_vec(decoder_inputs.rows(), self.buckets, y),
            attention: cache.attention(self.config.heads),
        })
    }

    fn add_positional(&self, h: &mut [f64], first_pos: usize) {
        let d = self.config.d_model;
        for (i, row) in h.chunks_exact_mut(d).enumerate() {
            let pe = positional_encoding(first_pos + i, &self.config.periods);
            for v in row {
                *v += pe;
            }
        }
    }

    pub(crate) fn run(
        &self,
        enc_x: &[f64],
        l: usize,
        dec_x: &[f64],
        m: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, Cache) {
        let p = &self.params;
        let rate = self.config.dropout;

        let mut h = self.enc_in.forward(p, enc_x, l);
        self.add_positional(&mut h, 0);
        let enc_drop = dropout(&mut h, rate, rng.as_deref_mut());
        let mut encoder = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (mut a, attn) = layer.attn.forward(p, &h, l, &h, l, false);
            let drop1 = dropout(&mut a, rate, rng.as_deref_mut());
            add_into(&mut a, &h);
            let (h1, norm1) = layer.norm1.forward(p, &a);
            let mut f = layer.linear.forward(p, &h1, l);
            let drop2 = dropout(&mut f, rate, rng.as_deref_mut());
            add_into(&mut f, &h1);
            let (h2, norm2) = layer.norm2.forward(p, &f);
            encoder.push(EncoderCache {
                input: std::mem::replace(&mut h, h2),
                attn,
                drop1,
                norm1,
                hidden: h1,
                drop2,
                norm2,
            });
        }
        let enc_out = h;

        let mut g = self.dec_in.forward(p, dec_x, m);
        self.add_positional(&mut g, l - m);
        let dec_drop = dropout(&mut g, rate, rng.as_deref_mut());
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let (mut s, self_attn) = layer.self_attn.forward(p, &g, m, &g, m, true);
            let drop1 = dropout(&mut s, rate, rng.as_deref_mut());
            add_into(&mut s, &g);
            let (h1, norm1) = layer.norm1.forward(p, &s);
            let (mut c, cross) = layer.cross_attn.forward(p, &h1, m, &enc_out, l, false);
            let drop2 = dropout(&mut c, rate, rng.as_deref_mut());
            add_into(&mut c, &h1);
            let (h2, norm2) = layer.norm2.forward(p, &c);
            let mut f = layer.linear.forward(p, &h2, m);
            let drop3 = dropout(&mut f, rate, rng.as_deref_mut());
            add_into(&mut f, &h2);
            let (h3, norm3) = layer.norm3.forward(p, &f);
            decoder.push(DecoderCache {
                input: std::mem::replace(&mut g, h3),
                self_attn,
                drop1,
                norm1,
                h1,
                cross,
                drop2,
                norm2,
                h2,
                drop3,
                norm3,
            });
        }
        let y = self.out.forward(p, &g, m);
        let cache = Cache {
            enc_x: enc_x.to_vec(),
            dec_x: dec_x.to_vec(),
            l,
            m,
            enc_drop,
            dec_drop,
            encoder,
            enc_out,
            decoder,
            dec_out: g,
        };
        (y, cache)
    }

    /// Accumulates parameter gradients of a loss whose gradient w.r.t. the
    /// outputs is `dy` (`m x buckets`).
    pub(crate) fn backward(&self, cache: &Cache, dy: &[f64], grads: &mut [f64]) {
        let p = &self.params;
        let (l, m) = (cache.l, cache.m);
        let mut dg = vec![0.0; m * self.config.d_model];
        self.out.backward(p, &cache.dec_out, m, dy, grads, Some((&mut dg, false)));

        let mut d_enc = vec![0.0; l * self.config.d_model];
        for (layer, c) in self.decoder.iter().zip(&cache.decoder).rev() {
            let mut ds = layer.norm3.backward(p, &c.norm3, &dg, grads);
            let mut dh2 = ds.clone();
            apply_mask(&mut ds, &c.drop3);
            layer.linear.backward(p, &c.h2, m, &ds, grads, Some((&mut dh2, true)));

            let mut ds = layer.norm2.backward(p, &c.norm2, &dh2, grads);
            let mut dh1 = ds.clone();
            apply_mask(&mut ds, &c.drop2);
            let (dq, dkv) = layer.cross_attn.backward(p, &c.cross, &c.h1, &cache.enc_out, &ds, grads);
            add_into(&mut dh1, &dq);
            add_into(&mut d_enc, &dkv);

            let mut ds = layer.norm1.backward(p, &c.norm1, &dh1, grads);
            let mut dinput = ds.clone();
            apply_mask(&mut ds, &c.drop1);
            let (dq, dkv) = layer.self_attn.backward(p, &c.self_attn, &c.input, &c.input, &ds, grads);
            add_into(&mut dinput, &dq);
            add_into(&mut dinput, &dkv);
            dg = dinput;
        }
        apply_mask(&mut dg, &cache.dec_drop);
        self.dec_in.backward(p, &cache.dec_x, m, &dg, grads, None);

        let mut dh = d_enc;
        for (layer, c) in self.encoder.iter().zip(&cache.encoder).rev() {
            let mut ds = layer.norm2.backward(p, &c.norm2, &dh, grads);
            let mut dh1 = ds.clone();
            apply_mask(&mut ds, &c.drop2);
            layer.linear.backward(p, &c.hidden, l, &ds, grads, Some((&mut dh1, true)));

            let mut ds = layer.norm1.backward(p, &c.norm1, &dh1, grads);
            let mut dinput = ds.clone();
            apply_mask(&mut ds, &c.drop1);
            let (dq, dkv) = layer.attn.backward(p, &c.attn, &c.input, &c.input, &ds, grads);
            add_into(&mut dinput, &dq);
            add_into(&mut dinput, &dkv);
            dh = dinput;
        }
        apply_mask(&mut dh, &cache.enc_drop);
        self.enc_in.backward(p, &cache.enc_x, l, &dh, grads, None);
    }

    /// Squared-error loss of one sample, mean over its `m x buckets` components,
    /// scaled by `weight`; gradients are accumulated with the same scaling.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn sample_loss_grad(
        &self,
        window: &[f64],
        l: usize,
        dec_x: &[f64],
        m: usize,
        target: &[f64],
        weight: f64,
        grads: &mut [f64],
        rng: Option<&mut ChaCha8Rng>,
    ) -> f64 {
        let (y, cache) = self.run(window, l, dec_x, m, rng);
        let n = y.len() as f64;
        let mut loss = 0.0;
        let dy: Vec<f64> = y
            .iter()
            .zip(target)
            .map(|(a, b)| {
                loss += (a - b) * (a - b);
                2.0 * (a - b) * weight / n
            })
            .collect();
        self.backward(&cache, &dy, grads);
        loss * weight / n
    }

    /// Raw-count forecast of the row following `history` (needs normalization).
    pub fn predict_counts(&self, history: &Matrix) -> Result<Vec<f64>> {
        let norm = self
            .normalization
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("model has no normalization; train it first".into()))?;
        let wl = self.config.window_len;
        if history.rows() < wl {
            return Err(Error::InsufficientHistory {
                needed: wl,
                available: history.rows(),
            });
        }
        let window = norm.normalize_matrix(&history.slice_rows(history.rows() - wl..history.rows()));
        let out = self.forward(&window)?;
        Ok(out
            .prediction()
            .iter()
            .enumerate()
            .map(|(c, &v)| norm.denormalize(c, v).max(0.0))
            .collect())
    }
}

impl Cache {
    fn attention(&self, heads: usize) -> Attention {
        let split = |c: &AttentionCache| -> Vec<Matrix> {
            let size = c.n * c.m;
            (0..heads)
                .map(|h| Matrix::from_vec(c.n, c.m, c.probs[h * size..(h + 1) * size].to_vec()))
                .collect()
        };
        Attention {
            encoder: self.encoder.iter().map(|e| split(&e.attn)).collect(),
            decoder_self: self.decoder.iter().map(|d| split(&d.self_attn)).collect(),
            decoder_cross: self.decoder.iter().map(|d| split(&d.cross)).collect(),
        }
    }
}
