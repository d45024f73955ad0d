use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::gradients;
use super::params::ModelParams;
use super::LstmError;
use crate::can_log::BitVector64;
use crate::dataset::Dataset;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss (with dropout active) per epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub wall_seconds: f64,
}

/// Adam with bias correction.
pub struct Adam {
    lr: f64,
    step: i32,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let lr = self.lr;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// SplitMix64 finalizer, used to derive independent per-example seeds.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dropout seed for example `index` in `epoch`.
pub fn dropout_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    mix_seed(mix_seed(seed, epoch as u64 + 1), index as u64 + 1)
}

pub fn train(params: ModelParams, data: &Dataset) -> Result<(ModelParams, TrainReport), LstmError> {
    train_with_progress(params, data, |_, _| {})
}

/// Mini-batch Adam training.
///
/// Batches are contiguous chronological slices of `batch_size` examples;
/// the order in which batches are visited is a seeded permutation per
/// epoch. Fully deterministic for a fixed config seed.
pub fn train_with_progress<F: FnMut(usize, f64)>(
    mut params: ModelParams,
    data: &Dataset,
    mut on_epoch: F,
) -> Result<(ModelParams, TrainReport), LstmError> {
    let cfg = params.config.clone();
    cfg.validate()?;
    params.check_shapes()?;
    if data.is_empty() {
        return Err(LstmError::EmptyDataset);
    }
    if data.window != cfg.window {
        return Err(LstmError::InvalidConfig(format!(
            "dataset window {} does not match model window {}",
            data.window, cfg.window
        )));
    }
    let start = Instant::now();
    let n = data.len();
    let windows: Vec<&[BitVector64]> = data.examples.iter().map(|e| e.x.as_slice()).collect();
    let labels: Vec<BitVector64> = data.examples.iter().map(|e| e.y).collect();
    let n_batches = n.div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..n_batches).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5348_5546));
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for &batch_idx in &order {
            let lo = batch_idx * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(n);
            let seeds: Vec<u64> = (lo..hi).map(|i| dropout_seed(cfg.seed, epoch, i)).collect();
            let (mut grad, loss) = gradients(&params, &windows[lo..hi], &labels[lo..hi], &seeds);
            if !loss.is_finite() {
                return Err(LstmError::NonFinite(format!("loss {loss} in epoch {}", epoch + 1)));
            }
            grad.clip_global_norm(cfg.clip_norm);
            if !grad.is_finite() {
                return Err(LstmError::NonFinite(format!("gradient in epoch {}", epoch + 1)));
            }
            adam.update(&mut params, &grad);
            total += loss * (hi - lo) as f64;
        }
        let epoch_loss = total / n as f64;
        epoch_losses.push(epoch_loss);
        on_epoch(epoch + 1, epoch_loss);
    }
    if !params.is_finite() {
        return Err(LstmError::NonFinite("parameters after training".into()));
    }
    let final_loss = epoch_losses.last().copied().unwrap_or(f64::NAN);
    Ok((
        params,
        TrainReport {
            epoch_losses,
            final_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}
