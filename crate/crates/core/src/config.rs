//! Flat `key = value` run configuration shared by all subcommands.
//!
//! ```text
//! # wheel-speed experiment
//! archetype = wheel_speed
//! aid = 0D0
//! seed = 42
//! epochs = 50
//! ```
//!
//! `#` starts a comment. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::lstm::{ModelConfig, OutputActivation};
use crate::simulator::{Archetype, AttackSpec, TraceSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Invalid { origin: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub archetype: Archetype,
    pub aid: u16,
    pub duration: f64,
    pub rate: f64,
    /// `None` means the archetype's default attack payload.
    pub attack_payload: Option<u64>,
    pub attack_rate: f64,
    pub attack_start: f64,
    pub attack_end: f64,
    pub train_fraction: f64,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            archetype: Archetype::WheelSpeed,
            aid: 0x0D0,
            duration: 141.0,
            rate: 100.0,
            attack_payload: None,
            attack_rate: 100.0,
            attack_start: 14.0,
            attack_end: 29.0,
            train_fraction: 1.0,
            model: ModelConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "archetype",
    "aid",
    "duration",
    "rate",
    "attack_payload",
    "attack_rate",
    "attack_start",
    "attack_end",
    "train_fraction",
    "window",
    "lstm_hidden",
    "dense_hidden",
    "dropout_rate",
    "output_activation",
    "batch_size",
    "learning_rate",
    "epochs",
    "clip_norm",
];

fn parse_hex_u64(v: &str) -> Option<u64> {
    let v = v.trim_start_matches("0x").trim_start_matches("0X");
    if v.is_empty() || v.len() > 16 {
        return None;
    }
    u64::from_str_radix(v, 16).ok()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let here = format!("{origin}:{}", idx + 1);
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Invalid {
                origin: here.clone(),
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            cfg.set_in(key.trim(), value.trim(), &here)?;
        }
        cfg.validate(origin)?;
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set_in(key, value, "override")
    }

    fn set_in(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        let invalid = |message: String| ConfigError::Invalid {
            origin: origin.to_string(),
            message,
        };
        let bad = || invalid(format!("bad value {value:?} for {key}"));
        let real = || value.parse::<f64>().map_err(|_| bad());
        let count = || value.parse::<usize>().map_err(|_| bad());
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "archetype" => self.archetype = value.parse().map_err(|_| bad())?,
            "aid" => {
                let aid = parse_hex_u64(value).filter(|&a| a <= 0x7FF).ok_or_else(bad)?;
                self.aid = aid as u16;
            }
            "duration" => self.duration = real()?,
            "rate" => self.rate = real()?,
            "attack_payload" => {
                let digits = value.trim_start_matches("0x").trim_start_matches("0X");
                if digits.len() != 16 {
                    return Err(invalid(format!("attack_payload needs 16 hex digits, got {value:?}")));
                }
                self.attack_payload = Some(parse_hex_u64(value).ok_or_else(bad)?);
            }
            "attack_rate" => self.attack_rate = real()?,
            "attack_start" => self.attack_start = real()?,
            "attack_end" => self.attack_end = real()?,
            "train_fraction" => self.train_fraction = real()?,
            "window" => self.model.window = count()?,
            "lstm_hidden" => {
                let widths: Result<Vec<usize>, _> = value.split(',').map(|w| w.trim().parse()).collect();
                let widths = widths.map_err(|_| bad())?;
                self.model.lstm_hidden = if widths.len() == 1 { vec![widths[0]; 3] } else { widths };
            }
            "dense_hidden" => self.model.dense_hidden = count()?,
            "dropout_rate" => self.model.dropout_rate = real()?,
            "output_activation" => {
                self.model.output_activation = value.parse::<OutputActivation>().map_err(|_| bad())?
            }
            "batch_size" => self.model.batch_size = count()?,
            "learning_rate" => self.model.learning_rate = real()?,
            "epochs" => self.model.epochs = count()?,
            "clip_norm" => self.model.clip_norm = real()?,
            other => return Err(invalid(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self, origin: &str) -> Result<(), ConfigError> {
        let invalid = |message: String| ConfigError::Invalid {
            origin: origin.to_string(),
            message,
        };
        self.trace_spec().validate().map_err(|e| invalid(e.to_string()))?;
        self.attack_spec().validate().map_err(|e| invalid(e.to_string()))?;
        self.model_config().validate().map_err(|e| invalid(e.to_string()))?;
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(invalid(format!("train_fraction {} not in (0, 1]", self.train_fraction)));
        }
        Ok(())
    }

    pub fn trace_spec(&self) -> TraceSpec {
        TraceSpec {
            duration: self.duration,
            rate: self.rate,
            seed: self.seed,
        }
    }

    pub fn attack_spec(&self) -> AttackSpec {
        let payload = self
            .attack_payload
            .unwrap_or_else(|| self.archetype.default_attack_payload());
        AttackSpec {
            aid: self.aid,
            payload: payload.to_be_bytes(),
            inject_rate: self.attack_rate,
            t_start: self.attack_start,
            t_end: self.attack_end,
        }
    }

    /// Model hyperparameters with the run seed applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: self.seed,
            ..self.model.clone()
        }
    }
}
