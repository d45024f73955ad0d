//! Central finite-difference check of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::network::{batch_loss, gradients};
use super::params::init_model;
use super::LstmError;
use crate::can_log::BitVector64;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error. A loss near 1 carries about
/// 1e-16 of rounding, so a central difference with step 1e-5 has ~1e-11
/// absolute noise; below this magnitude the ratio measures that noise.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub seed: u64,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks every parameter of a freshly initialized model on a random batch.
/// Dropout is disabled so the loss is a smooth deterministic function.
pub fn gradient_check(
    config: &ModelConfig,
    seed: u64,
    batch: usize,
) -> Result<GradCheckReport, LstmError> {
    let config = ModelConfig {
        dropout_rate: 0.0,
        ..config.clone()
    };
    let mut params = init_model(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00);
    // Non-trivial biases so every bias gradient is exercised away from init.
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let windows: Vec<Vec<BitVector64>> = (0..batch)
        .map(|_| (0..config.window).map(|_| BitVector64(rng.random())).collect())
        .collect();
    let refs: Vec<&[BitVector64]> = windows.iter().map(Vec::as_slice).collect();
    let labels: Vec<BitVector64> = (0..batch).map(|_| BitVector64(rng.random())).collect();
    let seeds = vec![0u64; batch];

    let (analytic, _) = gradients(&params, &refs, &labels, &seeds);
    let names: Vec<String> = analytic.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();

    let mut report = GradCheckReport {
        seed,
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for (ti, name) in names.iter().enumerate() {
        for (k, &exact) in analytic[ti].iter().enumerate() {
            let orig = params.tensors()[ti][k];
            params.tensors_mut()[ti][k] = orig + FD_STEP;
            let plus = batch_loss(&params, &refs, &labels, &seeds);
            params.tensors_mut()[ti][k] = orig - FD_STEP;
            let minus = batch_loss(&params, &refs, &labels, &seeds);
            params.tensors_mut()[ti][k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(exact, numeric);
            if !err.is_finite() {
                return Err(LstmError::NonFinite(format!("gradient check at {name}[{k}]")));
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_tensor = name.clone();
                report.worst_index = k;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::config::OutputActivation;

    #[test]
    fn sigmoid_gradients_match_finite_differences() {
        for seed in [1, 2, 3] {
            let r = gradient_check(&ModelConfig::tiny(4), seed, 3).unwrap();
            println!("{r:?}");
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn softmax_gradients_match_finite_differences() {
        let cfg = ModelConfig {
            output_activation: OutputActivation::Softmax,
            ..ModelConfig::tiny(4)
        };
        let r = gradient_check(&cfg, 5, 2).unwrap();
        println!("{r:?}");
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-11, 0.0) < 1e-4);
        assert!(relative_error(1e-9, 0.0) > 1e-4);
    }
}
