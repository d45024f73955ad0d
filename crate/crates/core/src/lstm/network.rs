//! Forward pass, loss and backpropagation through time for the stacked
//! LSTM predictor.
//!
//! Batches are laid out time-major: row `t * batch + b` of a sequence
//! matrix holds example `b` at step `t`. Input projections for a whole
//! layer are a single GEMM; only the recurrent product runs per step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{OutputActivation, FIELD_BITS};
use super::linalg::{add_column_sums, add_row_bias, exp, gemm, sigmoid, sigmoid_slice, tanh, tanh_into, tanh_slice};
use super::params::{LstmLayerParams, ModelParams};
use crate::can_log::BitVector64;

/// Probability clamp applied before taking logs in the cross-entropy loss.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One step of a standard LSTM cell for a single example.
///
/// `i, f, o = σ(W x + U h + b)`, `g = tanh(W x + U h + b)`,
/// `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`.
pub fn lstm_cell_step(
    layer: &LstmLayerParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (n_in, n_h) = (layer.input, layer.hidden);
    assert_eq!(x.len(), n_in);
    assert_eq!(h_prev.len(), n_h);
    assert_eq!(c_prev.len(), n_h);
    let pre = |gate: usize, j: usize| -> f64 {
        let row = gate * n_h + j;
        let wx: f64 = (0..n_in).map(|k| layer.w[row * n_in + k] * x[k]).sum();
        let uh: f64 = (0..n_h).map(|k| layer.u[row * n_h + k] * h_prev[k]).sum();
        wx + uh + layer.b[row]
    };
    let mut h = vec![0.0; n_h];
    let mut c = vec![0.0; n_h];
    for j in 0..n_h {
        let i = sigmoid(pre(0, j));
        let f = sigmoid(pre(1, j));
        let o = sigmoid(pre(2, j));
        let g = tanh(pre(3, j));
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * tanh(c[j]);
    }
    (h, c)
}

/// Dropout mask for one example: each unit is kept with probability
/// `1 - rate` and scaled by `1 / (1 - rate)`.
pub fn dropout_mask(width: usize, rate: f64, seed: u64) -> Vec<f64> {
    if rate == 0.0 {
        return vec![1.0; width];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    (0..width)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

struct LayerCache {
    /// Activated gates `[i | f | o | g]`, `(T·B) × 4H`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Intermediates of a batched forward pass, kept for backpropagation.
pub struct ForwardCache {
    batch: usize,
    steps: usize,
    inputs: Vec<f64>,
    layers: Vec<LayerCache>,
    dense1_pre: Vec<f64>,
    mask: Option<Vec<f64>>,
    dense1_out: Vec<f64>,
    /// `B × 64` predictions.
    pub output: Vec<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn prediction(&self, b: usize) -> &[f64] {
        &self.output[b * FIELD_BITS..(b + 1) * FIELD_BITS]
    }
}

/// Packs windows into a time-major `(T·B) × 64` matrix.
fn pack_inputs(windows: &[&[BitVector64]], steps: usize) -> Vec<f64> {
    let batch = windows.len();
    let mut out = vec![0.0; steps * batch * FIELD_BITS];
    for (b, w) in windows.iter().enumerate() {
        assert_eq!(w.len(), steps, "window length does not match model");
        for (t, bits) in w.iter().enumerate() {
            let row = (t * batch + b) * FIELD_BITS;
            bits.write_f64(&mut out[row..row + FIELD_BITS]);
        }
    }
    out
}

fn layer_forward(layer: &LstmLayerParams, x: &[f64], steps: usize, batch: usize) -> LayerCache {
    let (n_in, n_h) = (layer.input, layer.hidden);
    let rows = steps * batch;
    let g4 = 4 * n_h;
    let mut gates = vec![0.0; rows * g4];
    gemm(rows, n_in, g4, x, false, &layer.w, true, 0.0, &mut gates);
    add_row_bias(&mut gates, &layer.b);
    let mut c = vec![0.0; rows * n_h];
    let mut tanh_c = vec![0.0; rows * n_h];
    let mut h = vec![0.0; rows * n_h];
    for t in 0..steps {
        let (gate_rows, z) = (t * batch * g4, batch * g4);
        if t > 0 {
            let h_prev = &h[(t - 1) * batch * n_h..t * batch * n_h];
            gemm(
                batch,
                n_h,
                g4,
                h_prev,
                false,
                &layer.u,
                true,
                1.0,
                &mut gates[gate_rows..gate_rows + z],
            );
        }
        let block = &mut gates[gate_rows..gate_rows + z];
        for zg in block.chunks_exact_mut(g4) {
            let (sig, cand) = zg.split_at_mut(3 * n_h);
            sigmoid_slice(sig);
            tanh_slice(cand);
        }
        let (c_done, c_now) = c.split_at_mut(t * batch * n_h);
        let c_now = &mut c_now[..batch * n_h];
        for b in 0..batch {
            let zg = &block[b * g4..(b + 1) * g4];
            let (i, f, o, g) = (&zg[..n_h], &zg[n_h..2 * n_h], &zg[2 * n_h..3 * n_h], &zg[3 * n_h..]);
            let ct = &mut c_now[b * n_h..(b + 1) * n_h];
            if t > 0 {
                let cp = &c_done[((t - 1) * batch + b) * n_h..((t - 1) * batch + b + 1) * n_h];
                for j in 0..n_h {
                    ct[j] = f[j] * cp[j] + i[j] * g[j];
                }
            } else {
                for j in 0..n_h {
                    ct[j] = i[j] * g[j];
                }
            }
            let row = (t * batch + b) * n_h;
            let tc = &mut tanh_c[row..row + n_h];
            tanh_into(ct, tc);
            let hr = &mut h[row..row + n_h];
            for j in 0..n_h {
                hr[j] = o[j] * tc[j];
            }
        }
    }
    LayerCache {
        gates,
        c,
        tanh_c,
        h,
    }
}

fn activate_output(z: &mut [f64], activation: OutputActivation) {
    match activation {
        OutputActivation::Sigmoid => sigmoid_slice(z),
        OutputActivation::Softmax => {
            for row in z.chunks_exact_mut(FIELD_BITS) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = exp(*v - max);
                    sum += *v;
                }
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }
}

/// Batched forward pass. `dropout_seeds` holds one seed per example and is
/// only consulted in [`Mode::Train`].
pub fn forward_batch(
    params: &ModelParams,
    windows: &[&[BitVector64]],
    mode: Mode,
    dropout_seeds: &[u64],
) -> ForwardCache {
    let cfg = &params.config;
    let batch = windows.len();
    let steps = cfg.window;
    let inputs = pack_inputs(windows, steps);

    let mut layers: Vec<LayerCache> = Vec::with_capacity(params.lstm.len());
    for (l, layer) in params.lstm.iter().enumerate() {
        let x = if l == 0 { &inputs } else { &layers[l - 1].h };
        let cache = layer_forward(layer, x, steps, batch);
        layers.push(cache);
    }
    let top = layers.last().expect("at least one lstm layer");
    let n_top = params.dense1.inputs;
    let last = &top.h[(steps - 1) * batch * n_top..steps * batch * n_top];

    let d = &params.dense1;
    let mut dense1_pre = vec![0.0; batch * d.outputs];
    gemm(batch, d.inputs, d.outputs, last, false, &d.w, true, 0.0, &mut dense1_pre);
    add_row_bias(&mut dense1_pre, &d.b);
    let mut dense1_out: Vec<f64> = dense1_pre.iter().map(|v| v.max(0.0)).collect();
    let mask = if mode == Mode::Train && cfg.dropout_rate > 0.0 {
        assert_eq!(dropout_seeds.len(), batch, "one dropout seed per example");
        let mut mask = Vec::with_capacity(batch * d.outputs);
        for &seed in dropout_seeds {
            mask.extend(dropout_mask(d.outputs, cfg.dropout_rate, seed));
        }
        for (v, m) in dense1_out.iter_mut().zip(&mask) {
            *v *= m;
        }
        Some(mask)
    } else {
        None
    };

    let d2 = &params.dense2;
    let mut output = vec![0.0; batch * d2.outputs];
    gemm(batch, d2.inputs, d2.outputs, &dense1_out, false, &d2.w, true, 0.0, &mut output);
    add_row_bias(&mut output, &d2.b);
    activate_output(&mut output, cfg.output_activation);

    ForwardCache {
        batch,
        steps,
        inputs,
        layers,
        dense1_pre,
        mask,
        dense1_out,
        output,
    }
}

/// Single-window forward pass.
pub fn forward(
    params: &ModelParams,
    x: &[BitVector64],
    mode: Mode,
    dropout_seed: u64,
) -> (Vec<f64>, ForwardCache) {
    let cache = forward_batch(params, &[x], mode, &[dropout_seed]);
    (cache.output.clone(), cache)
}

/// Inference-mode prediction of the next data field.
pub fn predict(params: &ModelParams, x: &[BitVector64]) -> Vec<f64> {
    forward_batch(params, &[x], Mode::Infer, &[]).output
}

/// Inference over many windows, chunked to bound memory.
pub fn predict_many(params: &ModelParams, windows: &[&[BitVector64]]) -> Vec<Vec<f64>> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(CHUNK) {
        let cache = forward_batch(params, chunk, Mode::Infer, &[]);
        out.extend(cache.output.chunks_exact(FIELD_BITS).map(<[f64]>::to_vec));
    }
    out
}

/// Per-example training loss: mean binary cross-entropy for sigmoid
/// outputs, mean squared error for softmax outputs.
pub fn loss(y_hat: &[f64], y: BitVector64, activation: OutputActivation) -> f64 {
    assert_eq!(y_hat.len(), FIELD_BITS);
    let total: f64 = y_hat
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let t = y.bit(k) as f64;
            match activation {
                OutputActivation::Sigmoid => {
                    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                }
                OutputActivation::Softmax => (p - t).powi(2),
            }
        })
        .sum();
    total / FIELD_BITS as f64
}

/// Gradient of `scale · loss` with respect to the pre-activation outputs.
fn output_delta(y_hat: &[f64], y: BitVector64, activation: OutputActivation, scale: f64, out: &mut [f64]) {
    let n = FIELD_BITS as f64;
    match activation {
        OutputActivation::Sigmoid => {
            for (k, (d, &p)) in out.iter_mut().zip(y_hat).enumerate() {
                // The clamp has zero derivative where it is active.
                *d = if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                    scale * (p - y.bit(k) as f64) / n
                } else {
                    0.0
                };
            }
        }
        OutputActivation::Softmax => {
            let dy: Vec<f64> = y_hat
                .iter()
                .enumerate()
                .map(|(k, &p)| scale * 2.0 * (p - y.bit(k) as f64) / n)
                .collect();
            let dot: f64 = dy.iter().zip(y_hat).map(|(a, b)| a * b).sum();
            for ((d, &p), &g) in out.iter_mut().zip(y_hat).zip(&dy) {
                *d = p * (g - dot);
            }
        }
    }
}

/// Backpropagates one LSTM layer. `dh` is the loss gradient with respect
/// to this layer's outputs at every step; returns the gradient with respect
/// to its inputs when `want_dx`.
#[allow(clippy::too_many_arguments)]
fn layer_backward(
    layer: &LstmLayerParams,
    cache: &LayerCache,
    x: &[f64],
    dh: &[f64],
    steps: usize,
    batch: usize,
    grad: &mut LstmLayerParams,
    want_dx: bool,
) -> Option<Vec<f64>> {
    let (n_in, n_h) = (layer.input, layer.hidden);
    let g4 = 4 * n_h;
    let rows = steps * batch;
    let mut dz = vec![0.0; rows * g4];
    let mut dh_next = vec![0.0; batch * n_h];
    let mut dc_next = vec![0.0; batch * n_h];
    let zeros = vec![0.0; n_h];
    for t in (0..steps).rev() {
        for b in 0..batch {
            let row = t * batch + b;
            let span = row * n_h..(row + 1) * n_h;
            let gates = &cache.gates[row * g4..(row + 1) * g4];
            let (gi, rest) = gates.split_at(n_h);
            let (gf, rest) = rest.split_at(n_h);
            let (go, gg) = rest.split_at(n_h);
            let dzr = &mut dz[row * g4..(row + 1) * g4];
            let (di, rest) = dzr.split_at_mut(n_h);
            let (df, rest) = rest.split_at_mut(n_h);
            let (d_o, dg) = rest.split_at_mut(n_h);
            let tc = &cache.tanh_c[span.clone()];
            let dh_out = &dh[span];
            let c_prev = if t > 0 {
                &cache.c[((t - 1) * batch + b) * n_h..((t - 1) * batch + b + 1) * n_h]
            } else {
                &zeros[..]
            };
            let dh_rec = &dh_next[b * n_h..(b + 1) * n_h];
            let dc_rec = &mut dc_next[b * n_h..(b + 1) * n_h];
            for j in 0..n_h {
                let (i, f, o, g) = (gi[j], gf[j], go[j], gg[j]);
                let dht = dh_out[j] + dh_rec[j];
                let dc = dc_rec[j] + dht * o * (1.0 - tc[j] * tc[j]);
                di[j] = dc * g * i * (1.0 - i);
                df[j] = dc * c_prev[j] * f * (1.0 - f);
                d_o[j] = dht * tc[j] * o * (1.0 - o);
                dg[j] = dc * i * (1.0 - g * g);
                dc_rec[j] = dc * f;
            }
        }
        if t > 0 {
            let dzt = &dz[t * batch * g4..(t + 1) * batch * g4];
            gemm(batch, g4, n_h, dzt, false, &layer.u, false, 0.0, &mut dh_next);
        }
    }
    gemm(g4, rows, n_in, &dz, true, x, false, 1.0, &mut grad.w);
    if steps > 1 {
        let later = &dz[batch * g4..];
        let earlier = &cache.h[..(steps - 1) * batch * n_h];
        gemm(g4, (steps - 1) * batch, n_h, later, true, earlier, false, 1.0, &mut grad.u);
    }
    add_column_sums(&dz, &mut grad.b);
    want_dx.then(|| {
        let mut dx = vec![0.0; rows * n_in];
        gemm(rows, g4, n_in, &dz, false, &layer.w, false, 0.0, &mut dx);
        dx
    })
}

/// Gradients of the mean batch loss, without clipping. Also returns that
/// mean loss.
pub fn gradients(
    params: &ModelParams,
    windows: &[&[BitVector64]],
    labels: &[BitVector64],
    dropout_seeds: &[u64],
) -> (ModelParams, f64) {
    assert!(!windows.is_empty(), "empty batch");
    assert_eq!(windows.len(), labels.len());
    let cfg = &params.config;
    let cache = forward_batch(params, windows, Mode::Train, dropout_seeds);
    let batch = cache.batch;
    let steps = cache.steps;
    let scale = 1.0 / batch as f64;
    let mut grad = params.zeros_like();

    let mut mean_loss = 0.0;
    let mut dz2 = vec![0.0; batch * FIELD_BITS];
    for (b, &y) in labels.iter().enumerate() {
        let pred = cache.prediction(b);
        mean_loss += loss(pred, y, cfg.output_activation) * scale;
        output_delta(
            pred,
            y,
            cfg.output_activation,
            scale,
            &mut dz2[b * FIELD_BITS..(b + 1) * FIELD_BITS],
        );
    }

    let d2 = &params.dense2;
    gemm(d2.outputs, batch, d2.inputs, &dz2, true, &cache.dense1_out, false, 0.0, &mut grad.dense2.w);
    add_column_sums(&dz2, &mut grad.dense2.b);
    let mut dd1 = vec![0.0; batch * d2.inputs];
    gemm(batch, d2.outputs, d2.inputs, &dz2, false, &d2.w, false, 0.0, &mut dd1);
    for (k, v) in dd1.iter_mut().enumerate() {
        let m = cache.mask.as_ref().map_or(1.0, |m| m[k]);
        if cache.dense1_pre[k] <= 0.0 {
            *v = 0.0;
        } else {
            *v *= m;
        }
    }

    let d1 = &params.dense1;
    let n_top = d1.inputs;
    let top = cache.layers.last().expect("at least one lstm layer");
    let last = &top.h[(steps - 1) * batch * n_top..];
    gemm(d1.outputs, batch, d1.inputs, &dd1, true, last, false, 0.0, &mut grad.dense1.w);
    add_column_sums(&dd1, &mut grad.dense1.b);

    let mut dh = vec![0.0; steps * batch * n_top];
    gemm(
        batch,
        d1.outputs,
        d1.inputs,
        &dd1,
        false,
        &d1.w,
        false,
        0.0,
        &mut dh[(steps - 1) * batch * n_top..],
    );

    for l in (0..params.lstm.len()).rev() {
        let x = if l == 0 { &cache.inputs } else { &cache.layers[l - 1].h };
        let dx = layer_backward(
            &params.lstm[l],
            &cache.layers[l],
            x,
            &dh,
            steps,
            batch,
            &mut grad.lstm[l],
            l > 0,
        );
        if let Some(dx) = dx {
            dh = dx;
        }
    }
    (grad, mean_loss)
}

/// Gradients of the mean batch loss with global-norm clipping at the
/// configured threshold.
pub fn backward(
    params: &ModelParams,
    windows: &[&[BitVector64]],
    labels: &[BitVector64],
    dropout_seeds: &[u64],
) -> ModelParams {
    let (mut grad, _) = gradients(params, windows, labels, dropout_seeds);
    grad.clip_global_norm(params.config.clip_norm);
    grad
}

/// Mean batch loss in training mode (used by finite-difference checks).
pub fn batch_loss(
    params: &ModelParams,
    windows: &[&[BitVector64]],
    labels: &[BitVector64],
    dropout_seeds: &[u64],
) -> f64 {
    let cache = forward_batch(params, windows, Mode::Train, dropout_seeds);
    let scale = 1.0 / cache.batch as f64;
    labels
        .iter()
        .enumerate()
        .map(|(b, &y)| loss(cache.prediction(b), y, params.config.output_activation) * scale)
        .sum()
}
