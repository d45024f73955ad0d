//! Anomaly scoring from prediction error.
//!
//! For each frame the model's prediction error `e = ‖y − ŷ‖₂` is compared to
//! a Gaussian fitted on the errors the model makes on its own training
//! windows. The score is the one-sided p-value `1 − Φ(z)` with
//! `z = (e − μ) / σ`; small values mean the error is unusually large.

use std::borrow::Cow;
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::can_log::{BitVector64, CanFrame};
use crate::dataset::Dataset;
use crate::lstm::{predict, predict_many, ModelParams, FIELD_BITS};

/// Variance floor so a perfectly learned AID still yields a finite z.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Beyond this z the upper tail is reported as exactly zero.
pub const Z_TAIL_CUTOFF: f64 = 39.0;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("need at least 2 training errors to fit, got {0}")]
    TooFewErrors(usize),
    #[error("invalid error model: {0}")]
    InvalidModel(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Euclidean distance between the observed bits and the predicted
/// probabilities.
pub fn prediction_error(y: BitVector64, y_hat: &[f64]) -> f64 {
    assert_eq!(y_hat.len(), FIELD_BITS, "prediction must have 64 entries");
    y_hat
        .iter()
        .enumerate()
        .map(|(k, &p)| (y.bit(k) as f64 - p).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianErrorModel {
    pub mu: f64,
    /// Unbiased sample variance.
    pub sigma2: f64,
    /// `sqrt(max(sigma2, VARIANCE_FLOOR))`
    pub sigma: f64,
    pub n: usize,
}

impl GaussianErrorModel {
    pub fn new(mu: f64, sigma2: f64, n: usize) -> Result<Self, ScoreError> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(ScoreError::InvalidModel(format!("mu = {mu}")));
        }
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(ScoreError::InvalidModel(format!("sigma2 = {sigma2}")));
        }
        if n < 2 {
            return Err(ScoreError::TooFewErrors(n));
        }
        Ok(Self {
            mu,
            sigma2,
            sigma: sigma2.max(VARIANCE_FLOOR).sqrt(),
            n,
        })
    }

    pub fn z_score(&self, e: f64) -> f64 {
        (e - self.mu) / self.sigma
    }

    /// `(z, 1 − Φ(z))` for an observed error.
    pub fn p_value(&self, e: f64) -> (f64, f64) {
        let z = self.z_score(e);
        (z, upper_tail(z))
    }

    /// Serializes as `key = value` lines with round-trip exact reals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# gaussian fit of training prediction errors").unwrap();
        writeln!(s, "mu = {:?}", self.mu).unwrap();
        writeln!(s, "sigma2 = {:?}", self.sigma2).unwrap();
        writeln!(s, "sigma = {:?}", self.sigma).unwrap();
        writeln!(s, "n = {}", self.n).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ScoreError> {
        let (mut mu, mut sigma2, mut n) = (None, None, None);
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ScoreError::Parse {
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let real = || value.parse::<f64>().map_err(|_| err(format!("bad number {value:?}")));
            match key {
                "mu" => mu = Some(real()?),
                "sigma2" => sigma2 = Some(real()?),
                "sigma" => {
                    real()?;
                }
                "n" => n = Some(value.parse::<usize>().map_err(|_| err(format!("bad count {value:?}")))?),
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        match (mu, sigma2, n) {
            (Some(mu), Some(sigma2), Some(n)) => Self::new(mu, sigma2, n),
            _ => Err(ScoreError::InvalidModel("missing mu, sigma2 or n".into())),
        }
    }
}

/// One-sided upper tail of the standard normal, `1 − Φ(z) = erfc(z/√2)/2`.
pub fn upper_tail(z: f64) -> f64 {
    if z > Z_TAIL_CUTOFF {
        return 0.0;
    }
    (0.5 * libm::erfc(z / std::f64::consts::SQRT_2)).clamp(0.0, 1.0)
}

/// Mean and unbiased variance of the training errors.
pub fn fit_error_model(errors: &[f64]) -> Result<GaussianErrorModel, ScoreError> {
    let n = errors.len();
    if n < 2 {
        return Err(ScoreError::TooFewErrors(n));
    }
    let mu = errors.iter().sum::<f64>() / n as f64;
    let sigma2 = errors.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
    GaussianErrorModel::new(mu, sigma2, n)
}

pub fn p_value(model: &GaussianErrorModel, e: f64) -> (f64, f64) {
    model.p_value(e)
}

/// Prediction errors of `params` on every window of `data`.
pub fn dataset_errors(params: &ModelParams, data: &Dataset) -> Vec<f64> {
    let windows: Vec<&[BitVector64]> = data.examples.iter().map(|e| e.x.as_slice()).collect();
    predict_many(params, &windows)
        .iter()
        .zip(&data.examples)
        .map(|(y_hat, ex)| prediction_error(ex.y, y_hat))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyScore {
    pub timestamp: f64,
    pub aid: u16,
    pub e: f64,
    pub z: f64,
    pub p: f64,
    /// Ground truth for evaluation only; never used for scoring.
    pub target_injected: bool,
}

/// Online scorer for one AID: keeps the last `window` data fields and
/// scores each new frame once the window is full.
pub struct StreamScorer<'a> {
    params: Cow<'a, ModelParams>,
    model: GaussianErrorModel,
    history: VecDeque<BitVector64>,
}

impl<'a> StreamScorer<'a> {
    pub fn new(params: &'a ModelParams, model: GaussianErrorModel) -> Self {
        Self::from_cow(Cow::Borrowed(params), model)
    }

    pub fn owned(params: ModelParams, model: GaussianErrorModel) -> StreamScorer<'static> {
        StreamScorer::from_cow(Cow::Owned(params), model)
    }

    fn from_cow(params: Cow<'a, ModelParams>, model: GaussianErrorModel) -> Self {
        let cap = params.config.window + 1;
        Self {
            params,
            model,
            history: VecDeque::with_capacity(cap),
        }
    }

    pub fn window(&self) -> usize {
        self.params.config.window
    }

    pub fn error_model(&self) -> &GaussianErrorModel {
        &self.model
    }

    /// Forgets the buffered context.
    pub fn reset(&mut self) {
        self.history.clear();
    }

    pub fn push(&mut self, frame: &CanFrame) -> Option<AnomalyScore> {
        let bits = frame.bits();
        let window = self.params.config.window;
        let score = (self.history.len() == window).then(|| {
            let ctx: Vec<BitVector64> = self.history.iter().copied().collect();
            let y_hat = predict(&self.params, &ctx);
            self.score(frame, &y_hat)
        });
        if self.history.len() == window {
            self.history.pop_front();
        }
        self.history.push_back(bits);
        score
    }

    fn score(&self, frame: &CanFrame, y_hat: &[f64]) -> AnomalyScore {
        score_prediction(&self.model, frame, y_hat)
    }
}

fn score_prediction(model: &GaussianErrorModel, frame: &CanFrame, y_hat: &[f64]) -> AnomalyScore {
    let e = prediction_error(frame.bits(), y_hat);
    let (z, p) = model.p_value(e);
    AnomalyScore {
        timestamp: frame.timestamp(),
        aid: frame.aid(),
        e,
        z,
        p,
        target_injected: frame.injected,
    }
}

/// Scores a chronological single-AID frame sequence. The first `window`
/// frames only fill the context; every later frame gets one score. Only
/// the payload order matters, never timestamps.
pub fn score_stream(
    params: &ModelParams,
    model: &GaussianErrorModel,
    frames: &[CanFrame],
) -> Vec<AnomalyScore> {
    let window = params.config.window;
    if frames.len() <= window {
        return Vec::new();
    }
    let bits: Vec<BitVector64> = frames.iter().map(CanFrame::bits).collect();
    let windows: Vec<&[BitVector64]> = (window..frames.len()).map(|t| &bits[t - window..t]).collect();
    predict_many(params, &windows)
        .iter()
        .zip(&frames[window..])
        .map(|(y_hat, frame)| score_prediction(model, frame, y_hat))
        .collect()
}

/// Formats a real with `digits` significant digits in the style of C's `%g`.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{}{:02}", strip(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        strip(&format!("{x:.decimals$}"))
    }
}

pub const SCORE_CSV_HEADER: &str = "timestamp,aid,e,z,p,injected";

pub fn score_csv_row(s: &AnomalyScore) -> String {
    format!(
        "{},{:03X},{},{},{},{}",
        format_significant(s.timestamp, 9),
        s.aid,
        format_significant(s.e, 9),
        format_significant(s.z, 9),
        format_significant(s.p, 9),
        u8::from(s.target_injected)
    )
}

pub fn write_scores<W: Write>(mut sink: W, scores: &[AnomalyScore]) -> io::Result<()> {
    writeln!(sink, "{SCORE_CSV_HEADER}")?;
    for s in scores {
        writeln!(sink, "{}", score_csv_row(s))?;
    }
    sink.flush()
}

pub fn read_scores<R: BufRead>(source: R) -> Result<Vec<AnomalyScore>, ScoreError> {
    let mut out = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let err = |message: String| ScoreError::Parse {
            line: idx + 1,
            message,
        };
        if idx == 0 {
            if line.trim() != SCORE_CSV_HEADER {
                return Err(err(format!("expected header {SCORE_CSV_HEADER:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 6 {
            return Err(err(format!("expected 6 columns, got {}", cols.len())));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
        let aid = u16::from_str_radix(cols[1], 16).map_err(|_| err(format!("bad aid {:?}", cols[1])))?;
        let injected = match cols[5] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("bad injected flag {other:?}"))),
        };
        out.push(AnomalyScore {
            timestamp: real(cols[0])?,
            aid,
            e: real(cols[2])?,
            z: real(cols[3])?,
            p: real(cols[4])?,
            target_injected: injected,
        });
    }
    Ok(out)
}
