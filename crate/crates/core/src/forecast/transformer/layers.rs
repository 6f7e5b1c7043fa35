//! Parameter storage and the building blocks of the network, each with an
//! explicit backward pass.
//!
//! Activations are row-major `positions x features` buffers. Gradients are
//! accumulated into a flat buffer laid out exactly like [`ParamStore::data`].

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{add_column_sums, gemm, MatMut, MatRef};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn span(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

/// All trainable tensors of a model in one flat buffer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    specs: Vec<TensorSpec>,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> TensorId {
        let offset = self.data.len();
        self.specs.push(TensorSpec {
            name: name.into(),
            rows,
            cols,
            offset,
        });
        self.data.resize(offset + rows * cols, 0.0);
        TensorId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.specs[id.0]
    }

    pub fn span(&self, id: TensorId) -> Range<usize> {
        self.specs[id.0].span()
    }

    pub fn get(&self, id: TensorId) -> &[f64] {
        &self.data[self.span(id)]
    }

    pub fn get_mut(&mut self, id: TensorId) -> &mut [f64] {
        let span = self.span(id);
        &mut self.data[span]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// `y = x W + b` applied to every row.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: TensorId,
    pub bias: TensorId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), input, output),
            bias: store.add(format!("{name}.bias"), 1, output),
            input,
            output,
        }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let a = (6.0 / (self.input + self.output) as f64).sqrt();
        for w in store.get_mut(self.weight) {
            *w = rng.random_range(-a..a);
        }
        store.get_mut(self.bias).fill(0.0);
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64], n: usize) -> Vec<f64> {
        let mut y = vec![0.0; n * self.output];
        gemm(
            1.0,
            MatRef::new(x, n, self.input),
            MatRef::new(p.get(self.weight), self.input, self.output),
            0.0,
            MatMut::new(&mut y, n, self.output),
        );
        let b = p.get(self.bias);
        for row in y.chunks_exact_mut(self.output) {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        y
    }

    /// Accumulates parameter gradients; writes (or adds, with `accumulate`) the
    /// input gradient into `dx` when given.
    pub fn backward(
        &self,
        p: &ParamStore,
        x: &[f64],
        n: usize,
        dy: &[f64],
        grads: &mut [f64],
        dx: Option<(&mut [f64], bool)>,
    ) {
        let ws = p.span(self.weight);
        gemm(
            1.0,
            MatRef::new(x, n, self.input).t(),
            MatRef::new(dy, n, self.output),
            1.0,
            MatMut::new(&mut grads[ws], self.input, self.output),
        );
        let bs = p.span(self.bias);
        add_column_sums(dy, self.output, &mut grads[bs]);
        if let Some((dx, accumulate)) = dx {
            gemm(
                1.0,
                MatRef::new(dy, n, self.output),
                MatRef::new(p.get(self.weight), self.input, self.output).t(),
                if accumulate { 1.0 } else { 0.0 },
                MatMut::new(dx, n, self.input),
            );
        }
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: TensorId,
    pub bias: TensorId,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), 1, dim),
            bias: store.add(format!("{name}.bias"), 1, dim),
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.get_mut(self.gain).fill(1.0);
        store.get_mut(self.bias).fill(0.0);
    }

    pub(crate) fn forward(&self, p: &ParamStore, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let d = self.dim;
        let (g, b) = (p.get(self.gain), p.get(self.bias));
        let rows = x.len() / d;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for ((xr, yr), hr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)).zip(xhat.chunks_exact_mut(d)) {
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(r);
            for k in 0..d {
                hr[k] = (xr[k] - mean) * r;
                yr[k] = g[k] * hr[k] + b[k];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub(crate) fn backward(&self, p: &ParamStore, cache: &LayerNormCache, dy: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let d = self.dim;
        let g = p.get(self.gain);
        let gs = p.span(self.gain);
        let bs = p.span(self.bias);
        let mut dx = vec![0.0; dy.len()];
        let mut dxhat = vec![0.0; d];
        for (i, (dyr, dxr)) in dy.chunks_exact(d).zip(dx.chunks_exact_mut(d)).enumerate() {
            let hr = &cache.xhat[i * d..(i + 1) * d];
            for k in 0..d {
                grads[gs.start + k] += dyr[k] * hr[k];
                grads[bs.start + k] += dyr[k];
                dxhat[k] = dyr[k] * g[k];
            }
            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dh = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let r = cache.inv_std[i];
            for k in 0..d {
                dxr[k] = r * (dxhat[k] - mean_d - hr[k] * mean_dh);
            }
        }
        dx
    }
}

/// Scaled dot-product attention with several heads and output projection.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    pub n: usize,
    pub m: usize,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads x n x m` row-stochastic weights.
    pub probs: Vec<f64>,
    concat: Vec<f64>,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim),
            key: Linear::new(store, &format!("{name}.key"), dim, dim),
            value: Linear::new(store, &format!("{name}.value"), dim, dim),
            output: Linear::new(store, &format!("{name}.output"), dim, dim),
            heads,
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for l in [&self.query, &self.key, &self.value, &self.output] {
            l.init(store, rng);
        }
    }

    /// `xq` has `n` rows, `xkv` has `m` rows. With `causal`, query `i` sees keys `..=i`.
    pub(crate) fn forward(
        &self,
        p: &ParamStore,
        xq: &[f64],
        n: usize,
        xkv: &[f64],
        m: usize,
        causal: bool,
    ) -> (Vec<f64>, AttentionCache) {
        let d = self.dim;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward(p, xq, n);
        let k = self.key.forward(p, xkv, m);
        let v = self.value.forward(p, xkv, m);
        let mut probs = vec![0.0; self.heads * n * m];
        let mut concat = vec![0.0; n * d];
        for h in 0..self.heads {
            let ph = &mut probs[h * n * m..(h + 1) * n * m];
            gemm(
                scale,
                MatRef::cols_of(&q, n, d, h * dh, dh),
                MatRef::cols_of(&k, m, d, h * dh, dh).t(),
                0.0,
                MatMut::new(ph, n, m),
            );
            for (i, row) in ph.chunks_exact_mut(m).enumerate() {
                let visible = if causal { (i + 1).min(m) } else { m };
                softmax_in_place(&mut row[..visible]);
                row[visible..].fill(0.0);
            }
            gemm(
                1.0,
                MatRef::new(ph, n, m),
                MatRef::cols_of(&v, m, d, h * dh, dh),
                0.0,
                MatMut::cols_of(&mut concat, n, d, h * dh, dh),
            );
        }
        let out = self.output.forward(p, &concat, n);
        (
            out,
            AttentionCache {
                n,
                m,
                q,
                k,
                v,
                probs,
                concat,
            },
        )
    }

    /// Returns `(d xq, d xkv)`.
    pub(crate) fn backward(
        &self,
        p: &ParamStore,
        cache: &AttentionCache,
        xq: &[f64],
        xkv: &[f64],
        dout: &[f64],
        grads: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let (n, m, d) = (cache.n, cache.m, self.dim);
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dconcat = vec![0.0; n * d];
        self.output
            .backward(p, &cache.concat, n, dout, grads, Some((&mut dconcat, false)));

        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; m * d];
        let mut dv = vec![0.0; m * d];
        let mut dp = vec![0.0; n * m];
        for h in 0..self.heads {
            let ph = &cache.probs[h * n * m..(h + 1) * n * m];
            // dP = dO_h V_h^T
            gemm(
                1.0,
                MatRef::cols_of(&dconcat, n, d, h * dh, dh),
                MatRef::cols_of(&cache.v, m, d, h * dh, dh).t(),
                0.0,
                MatMut::new(&mut dp, n, m),
            );
            // dV_h = P^T dO_h
            gemm(
                1.0,
                MatRef::new(ph, n, m).t(),
                MatRef::cols_of(&dconcat, n, d, h * dh, dh),
                0.0,
                MatMut::cols_of(&mut dv, m, d, h * dh, dh),
            );
            // softmax backward, in place: dS = P * (dP - rowsum(dP * P))
            for (prow, drow) in ph.chunks_exact(m).zip(dp.chunks_exact_mut(m)) {
                let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                for (dv_, pv) in drow.iter_mut().zip(prow) {
                    *dv_ = pv * (*dv_ - dot);
                }
            }
            gemm(
                scale,
                MatRef::new(&dp, n, m),
                MatRef::cols_of(&cache.k, m, d, h * dh, dh),
                0.0,
                MatMut::cols_of(&mut dq, n, d, h * dh, dh),
            );
            gemm(
                scale,
                MatRef::new(&dp, n, m).t(),
                MatRef::cols_of(&cache.q, n, d, h * dh, dh),
                0.0,
                MatMut::cols_of(&mut dk, m, d, h * dh, dh),
            );
        }
        let mut dxq = vec![0.0; n * d];
        let mut dxkv = vec![0.0; m * d];
        self.query.backward(p, xq, n, &dq, grads, Some((&mut dxq, false)));
        self.key.backward(p, xkv, m, &dk, grads, Some((&mut dxkv, false)));
        self.value.backward(p, xkv, m, &dv, grads, Some((&mut dxkv, true)));
        (dxq, dxkv)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Inverted dropout; returns the scaling mask applied, or `None` when inactive.
pub(crate) fn dropout(x: &mut [f64], rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

pub(crate) fn apply_mask(dx: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(mask) = mask {
        for (v, m) in dx.iter_mut().zip(mask) {
            *v *= m;
        }
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
