use std::fmt;
use std::str::FromStr;

use super::LstmError;
use crate::dataset::DEFAULT_WINDOW;

/// Width of one data field in bits.
pub const FIELD_BITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputActivation {
    /// Independent per-bit probabilities, trained with binary cross-entropy.
    #[default]
    Sigmoid,
    /// A distribution over the 64 outputs, trained with mean squared error.
    Softmax,
}

impl fmt::Display for OutputActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Softmax => "softmax",
        })
    }
}

impl FromStr for OutputActivation {
    type Err = LstmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            "softmax" => Ok(OutputActivation::Softmax),
            other => Err(LstmError::InvalidConfig(format!(
                "unknown output activation {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_width: usize,
    pub window: usize,
    pub lstm_hidden: Vec<usize>,
    pub dense_hidden: usize,
    pub output_width: usize,
    pub dropout_rate: f64,
    pub output_activation: OutputActivation,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Global-norm gradient clipping threshold.
    pub clip_norm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_width: FIELD_BITS,
            window: DEFAULT_WINDOW,
            lstm_hidden: vec![128, 128, 128],
            dense_hidden: 128,
            output_width: FIELD_BITS,
            dropout_rate: 0.2,
            output_activation: OutputActivation::Sigmoid,
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 50,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

impl ModelConfig {
    /// Small network used for gradient checks and quick tests.
    pub fn tiny(hidden: usize) -> Self {
        Self {
            lstm_hidden: vec![hidden; 3],
            dense_hidden: hidden,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LstmError> {
        let bad = |msg: String| Err(LstmError::InvalidConfig(msg));
        if self.input_width != FIELD_BITS || self.output_width != FIELD_BITS {
            return bad(format!(
                "input and output width must be {FIELD_BITS}, got {} and {}",
                self.input_width, self.output_width
            ));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.lstm_hidden.is_empty() || self.lstm_hidden.contains(&0) {
            return bad(format!("invalid lstm widths {:?}", self.lstm_hidden));
        }
        if self.dense_hidden == 0 {
            return bad("dense_hidden must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        Ok(())
    }
}
