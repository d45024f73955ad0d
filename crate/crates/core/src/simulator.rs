//! Synthetic ambient traffic for two kinds of AID and fixed-payload
//! injection attacks.
//!
//! The wheel-speed AID carries four big-endian 16-bit wheel speeds driven by
//! a shared mean-reverting random walk, so its low-order bits churn all the
//! time. The reverse-indicator AID carries a single flag bit that toggles
//! rarely, giving an almost constant payload.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use thiserror::Error;

use crate::can_log::CanFrame;

/// Mean-reversion rate of the base wheel speed (1/s).
pub const WHEEL_THETA: f64 = 0.5;
/// Long-run mean of the base wheel speed (raw units).
pub const WHEEL_MEAN: f64 = 3000.0;
/// Diffusion of the base wheel speed (raw units per √s).
pub const WHEEL_ETA: f64 = 120.0;
/// Standard deviation of per-wheel deviation from the base speed.
pub const WHEEL_JITTER: f64 = 15.0;
/// Mean dwell time of the reverse indicator in each state (s).
pub const REVERSE_MEAN_DWELL: f64 = 20.0;
/// Byte 0 value while the vehicle is in reverse.
pub const REVERSE_ON: u8 = 0x40;

pub const WHEEL_ATTACK_PAYLOAD: u64 = 0xFFFF_0000_0000_FFFF;
pub const REVERSE_ATTACK_PAYLOAD: u64 = 0x4000_0000_0000_0000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid trace spec: {0}")]
    InvalidTrace(String),
    #[error("invalid attack spec: {0}")]
    InvalidAttack(String),
    #[error("unknown archetype {0:?}")]
    UnknownArchetype(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Archetype {
    WheelSpeed,
    ReverseIndicator,
}

impl Archetype {
    pub fn default_attack_payload(self) -> u64 {
        match self {
            Archetype::WheelSpeed => WHEEL_ATTACK_PAYLOAD,
            Archetype::ReverseIndicator => REVERSE_ATTACK_PAYLOAD,
        }
    }

    pub fn generate(self, spec: &TraceSpec, aid: u16) -> Result<Vec<CanFrame>, SimError> {
        match self {
            Archetype::WheelSpeed => gen_wheel_speed_trace(spec, aid),
            Archetype::ReverseIndicator => gen_reverse_indicator_trace(spec, aid),
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Archetype::WheelSpeed => "wheel_speed",
            Archetype::ReverseIndicator => "reverse_indicator",
        })
    }
}

impl FromStr for Archetype {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wheel_speed" => Ok(Archetype::WheelSpeed),
            "reverse_indicator" => Ok(Archetype::ReverseIndicator),
            other => Err(SimError::UnknownArchetype(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    pub duration: f64,
    /// Frames per second for the AID.
    pub rate: f64,
    pub seed: u64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self {
            duration: 141.0,
            rate: 100.0,
            seed: 0,
        }
    }
}

impl TraceSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(SimError::InvalidTrace(format!("duration {}", self.duration)));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(SimError::InvalidTrace(format!("rate {}", self.rate)));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        slot_count(self.duration, self.rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub aid: u16,
    pub payload: [u8; 8],
    pub inject_rate: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let (s, e) = (self.t_start, self.t_end);
        if !(s.is_finite() && e.is_finite() && 0.0 <= s && s < e) {
            return Err(SimError::InvalidAttack(format!("window [{s}, {e})")));
        }
        if !(self.inject_rate.is_finite() && self.inject_rate >= 0.0) {
            return Err(SimError::InvalidAttack(format!("inject rate {}", self.inject_rate)));
        }
        if self.aid > crate::can_log::MAX_STANDARD_AID {
            return Err(SimError::InvalidAttack(format!("aid {:#X}", self.aid)));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        if self.inject_rate == 0.0 {
            0
        } else {
            slot_count(self.t_end - self.t_start, self.inject_rate)
        }
    }
}

/// Number of ticks `k / rate` that fall in `[0, span)`.
fn slot_count(span: f64, rate: f64) -> usize {
    (span * rate - 1e-9).ceil().max(0.0) as usize
}

/// Rounds to whole microseconds, the resolution of the log format.
fn to_micros(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

fn frame_at(t: f64, aid: u16, payload: &[u8; 8]) -> CanFrame {
    CanFrame::new(to_micros(t), aid, payload).expect("simulator produces valid frames")
}

/// Ambient wheel-speed traffic: four big-endian `u16` wheel speeds per frame.
pub fn gen_wheel_speed_trace(spec: &TraceSpec, aid: u16) -> Result<Vec<CanFrame>, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dt = 1.0 / spec.rate;
    let mut base: f64 = 0.0;
    let mut frames = Vec::with_capacity(spec.frame_count());
    for k in 0..spec.frame_count() {
        if k > 0 {
            let noise: f64 = rng.sample(StandardNormal);
            base += WHEEL_THETA * (WHEEL_MEAN - base) * dt + WHEEL_ETA * noise * dt.sqrt();
            base = base.clamp(0.0, 65535.0);
        }
        let mut payload = [0u8; 8];
        for w in 0..4 {
            let jitter: f64 = rng.sample(StandardNormal);
            let speed = (base + WHEEL_JITTER * jitter).round().clamp(0.0, 65535.0) as u16;
            payload[2 * w..2 * w + 2].copy_from_slice(&speed.to_be_bytes());
        }
        frames.push(frame_at(k as f64 * dt, aid, &payload));
    }
    Ok(frames)
}

/// Ambient reverse-indicator traffic. The vehicle starts out of reverse and
/// the flag toggles after exponentially distributed dwell times.
pub fn gen_reverse_indicator_trace(spec: &TraceSpec, aid: u16) -> Result<Vec<CanFrame>, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dwell = Exp::new(1.0 / REVERSE_MEAN_DWELL).expect("positive rate");
    let dt = 1.0 / spec.rate;
    let mut reverse = false;
    let mut next_toggle: f64 = rng.sample(dwell);
    let mut frames = Vec::with_capacity(spec.frame_count());
    for k in 0..spec.frame_count() {
        let t = k as f64 * dt;
        while t >= next_toggle {
            reverse = !reverse;
            next_toggle += rng.sample(dwell);
        }
        let mut payload = [0u8; 8];
        payload[0] = if reverse { REVERSE_ON } else { 0 };
        frames.push(frame_at(t, aid, &payload));
    }
    Ok(frames)
}

/// True when the attack payload differs from every ambient frame of the
/// attacked AID inside `[t_start, t_end)`, and there is at least one such
/// frame. An injection that repeats the current ambient value is not an
/// attack on the data.
pub fn attack_contradicts_ambient(ambient: &[CanFrame], atk: &AttackSpec) -> bool {
    let mut inside = ambient
        .iter()
        .filter(|f| f.aid() == atk.aid && f.timestamp() >= atk.t_start && f.timestamp() < atk.t_end)
        .peekable();
    inside.peek().is_some() && inside.all(|f| f.payload() != atk.payload.as_slice())
}

/// Seed for a fresh test trace: the first seed after `train_seed` whose
/// ambient traffic is contradicted by the attack over the whole window.
/// Gives up after `max_tries` candidates.
pub fn contextual_test_seed(
    archetype: Archetype,
    trace: &TraceSpec,
    atk: &AttackSpec,
    train_seed: u64,
    max_tries: u64,
) -> Result<Option<u64>, SimError> {
    for seed in (1..=max_tries).map(|k| train_seed.wrapping_add(k)) {
        let spec = TraceSpec { seed, ..trace.clone() };
        if attack_contradicts_ambient(&archetype.generate(&spec, atk.aid)?, atk) {
            return Ok(Some(seed));
        }
    }
    Ok(None)
}

/// Number of payload changes between consecutive frames.
pub fn count_toggles(frames: &[CanFrame]) -> usize {
    frames
        .windows(2)
        .filter(|w| w[0].payload() != w[1].payload())
        .count()
}

/// Adds fixed-payload frames at `1 / inject_rate` spacing over
/// `[t_start, t_end)` and merges them with the ambient traffic by timestamp.
/// Ambient frames keep their order and come first on equal timestamps.
pub fn inject_attack(ambient: &[CanFrame], atk: &AttackSpec) -> Result<Vec<CanFrame>, SimError> {
    atk.validate()?;
    let mut out = Vec::with_capacity(ambient.len() + atk.frame_count());
    out.extend_from_slice(ambient);
    for i in 0..atk.frame_count() {
        let t = atk.t_start + i as f64 / atk.inject_rate;
        let mut frame = frame_at(t, atk.aid, &atk.payload);
        frame.injected = true;
        out.push(frame);
    }
    out.sort_by(|a, b| a.timestamp().total_cmp(&b.timestamp()));
    Ok(out)
}

pub const TRUTH_CSV_HEADER: &str = "timestamp,aid,injected";

/// One row per frame, in log order.
pub fn write_truth<W: Write>(mut sink: W, frames: &[CanFrame]) -> io::Result<()> {
    writeln!(sink, "{TRUTH_CSV_HEADER}")?;
    for f in frames {
        writeln!(sink, "{:.6},{:03X},{}", f.timestamp(), f.aid(), u8::from(f.injected))?;
    }
    sink.flush()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub timestamp: f64,
    pub aid: u16,
    pub injected: bool,
}

pub fn read_truth<R: BufRead>(source: R) -> io::Result<Vec<TruthRow>> {
    let bad = |line: usize, msg: String| io::Error::new(io::ErrorKind::InvalidData, format!("truth line {line}: {msg}"));
    let mut rows = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if idx == 0 {
            if line.trim() != TRUTH_CSV_HEADER {
                return Err(bad(1, format!("expected header {TRUTH_CSV_HEADER:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 3 {
            return Err(bad(idx + 1, format!("expected 3 columns, got {}", cols.len())));
        }
        let timestamp = cols[0].parse().map_err(|_| bad(idx + 1, format!("timestamp {:?}", cols[0])))?;
        let aid = u16::from_str_radix(cols[1], 16).map_err(|_| bad(idx + 1, format!("aid {:?}", cols[1])))?;
        let injected = match cols[2] {
            "0" => false,
            "1" => true,
            other => return Err(bad(idx + 1, format!("injected flag {other:?}"))),
        };
        rows.push(TruthRow {
            timestamp,
            aid,
            injected,
        });
    }
    Ok(rows)
}

/// Re-applies sidecar flags to frames parsed from a log (which cannot carry
/// them). Rows and frames must be in the same order.
pub fn apply_truth(frames: &mut [CanFrame], truth: &[TruthRow]) -> Result<(), String> {
    if frames.len() != truth.len() {
        return Err(format!("{} frames but {} truth rows", frames.len(), truth.len()));
    }
    for (i, (f, t)) in frames.iter_mut().zip(truth).enumerate() {
        if f.aid() != t.aid || (f.timestamp() - t.timestamp).abs() > 5e-7 {
            return Err(format!("truth row {} does not match frame {}", i + 1, f));
        }
        f.injected = t.injected;
    }
    Ok(())
}
