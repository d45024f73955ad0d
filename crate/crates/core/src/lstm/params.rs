use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use super::LstmError;

/// Gate blocks inside the fused LSTM matrices, in storage order.
pub const GATES: [&str; 4] = ["input", "forget", "output", "candidate"];

/// One LSTM layer. The four gates are fused along the row axis in the order
/// input, forget, output, candidate: rows `g*hidden..(g+1)*hidden` of `w`
/// hold that gate's `hidden × input` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub input: usize,
    pub hidden: usize,
    /// `4·hidden × input`
    pub w: Vec<f64>,
    /// `4·hidden × hidden`
    pub u: Vec<f64>,
    /// `4·hidden`
    pub b: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            w: vec![0.0; 4 * hidden * input],
            u: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn gate_w(&self, gate: usize) -> &[f64] {
        let n = self.hidden * self.input;
        &self.w[gate * n..(gate + 1) * n]
    }

    pub fn gate_u(&self, gate: usize) -> &[f64] {
        let n = self.hidden * self.hidden;
        &self.u[gate * n..(gate + 1) * n]
    }

    pub fn gate_b(&self, gate: usize) -> &[f64] {
        &self.b[gate * self.hidden..(gate + 1) * self.hidden]
    }
}

/// Fully connected layer, `w` is `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }
}

/// All weights of one AID's predictor. Also used for gradients, which have
/// the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub lstm: Vec<LstmLayerParams>,
    pub dense1: DenseParams,
    pub dense2: DenseParams,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut lstm = Vec::with_capacity(config.lstm_hidden.len());
        let mut input = config.input_width;
        for &hidden in &config.lstm_hidden {
            lstm.push(LstmLayerParams::zeros(input, hidden));
            input = hidden;
        }
        Self {
            config: config.clone(),
            lstm,
            dense1: DenseParams::zeros(input, config.dense_hidden),
            dense2: DenseParams::zeros(config.dense_hidden, config.output_width),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Every parameter tensor with a descriptive name, layer by layer.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.lstm.iter().enumerate() {
            out.push((format!("lstm{l}.w"), &layer.w[..]));
            out.push((format!("lstm{l}.u"), &layer.u[..]));
            out.push((format!("lstm{l}.b"), &layer.b[..]));
        }
        out.push(("dense1.w".into(), &self.dense1.w[..]));
        out.push(("dense1.b".into(), &self.dense1.b[..]));
        out.push(("dense2.w".into(), &self.dense2.w[..]));
        out.push(("dense2.b".into(), &self.dense2.b[..]));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.lstm {
            out.push(&mut layer.w);
            out.push(&mut layer.u);
            out.push(&mut layer.b);
        }
        out.push(&mut self.dense1.w);
        out.push(&mut self.dense1.b);
        out.push(&mut self.dense2.w);
        out.push(&mut self.dense2.b);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub(crate) fn check_shapes(&self) -> Result<(), LstmError> {
        let want = Self::zeros(&self.config);
        let ok = want.lstm.len() == self.lstm.len()
            && want
                .tensors()
                .iter()
                .zip(self.tensors())
                .all(|(a, b)| a.len() == b.len());
        if ok {
            Ok(())
        } else {
            Err(LstmError::InvalidConfig(
                "parameter shapes do not match config".into(),
            ))
        }
    }
}

fn glorot_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, out: &mut [f64]) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.random_range(-limit..limit);
    }
}

/// Random `n × n` orthogonal matrix (row-major) from Gram-Schmidt on a
/// Gaussian matrix, with signs fixed so the distribution is uniform.
fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut q: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
        let mut degenerate = false;
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| q[i * n + k] * q[j * n + k]).sum();
                for k in 0..n {
                    q[i * n + k] -= dot * q[j * n + k];
                }
            }
            let norm = (0..n).map(|k| q[i * n + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-10 {
                degenerate = true;
                break;
            }
            for k in 0..n {
                q[i * n + k] /= norm;
            }
        }
        if !degenerate {
            return q;
        }
    }
}

/// Deterministic initialization: Glorot-uniform input and dense weights,
/// orthogonal recurrent blocks, zero biases except forget gates at 1.0.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams, LstmError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(config);
    for layer in &mut params.lstm {
        let (input, hidden) = (layer.input, layer.hidden);
        glorot_uniform(&mut rng, input, 4 * hidden, &mut layer.w);
        for g in 0..4 {
            let q = orthogonal(&mut rng, hidden);
            layer.u[g * hidden * hidden..(g + 1) * hidden * hidden].copy_from_slice(&q);
        }
        layer.b[hidden..2 * hidden].fill(1.0);
    }
    let d1 = &mut params.dense1;
    glorot_uniform(&mut rng, d1.inputs, d1.outputs, &mut d1.w);
    let d2 = &mut params.dense2;
    glorot_uniform(&mut rng, d2.inputs, d2.outputs, &mut d2.w);
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::tiny(6);
        assert_eq!(init_model(&cfg, 7).unwrap(), init_model(&cfg, 7).unwrap());
        assert_ne!(init_model(&cfg, 7).unwrap(), init_model(&cfg, 8).unwrap());
    }

    #[test]
    fn forget_biases_are_one_and_others_zero() {
        let p = init_model(&ModelConfig::tiny(5), 1).unwrap();
        for layer in &p.lstm {
            for g in 0..4 {
                let want = if g == 1 { 1.0 } else { 0.0 };
                assert!(layer.gate_b(g).iter().all(|&b| b == want));
            }
        }
        assert!(p.dense1.b.iter().chain(&p.dense2.b).all(|&b| b == 0.0));
    }

    #[test]
    fn weights_respect_glorot_limit() {
        let cfg = ModelConfig::tiny(8);
        let p = init_model(&cfg, 3).unwrap();
        let l0 = &p.lstm[0];
        let limit = (6.0 / (64 + 32) as f64).sqrt();
        assert!(l0.w.iter().all(|v| v.abs() <= limit));
        let limit = (6.0 / (8 + 64) as f64).sqrt();
        assert!(p.dense2.w.iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn recurrent_blocks_are_orthogonal() {
        let p = init_model(&ModelConfig::tiny(6), 11).unwrap();
        let n = 6;
        for layer in &p.lstm {
            for g in 0..4 {
                let q = layer.gate_u(g);
                for i in 0..n {
                    for j in 0..n {
                        let dot: f64 = (0..n).map(|k| q[i * n + k] * q[j * n + k]).sum();
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((dot - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn clip_bounds_norm() {
        let mut p = init_model(&ModelConfig::tiny(4), 2).unwrap();
        let before = p.clip_global_norm(0.5);
        assert!(before > 0.5);
        assert!((p.global_norm() - 0.5).abs() < 1e-12);
        let unchanged = p.clone();
        p.clip_global_norm(10.0);
        assert_eq!(p, unchanged);
    }
}
