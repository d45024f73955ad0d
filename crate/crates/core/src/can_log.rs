//! CAN frame model and the candump text log format.
//!
//! A log line looks like `(141.000000) can0 0D0#1122334455667788`. Only
//! standard 11-bit identifiers and classic (<= 8 byte) data frames are
//! accepted; anything else is reported per line and skipped.

use std::fmt::{self, Write as _};
use std::io::{self, BufRead, Write};

use thiserror::Error;

/// Largest standard (11-bit) arbitration ID.
pub const MAX_STANDARD_AID: u16 = 0x7FF;

/// Maximum classic CAN payload length in bytes.
pub const MAX_DLC: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("bad arbitration id: {0}")]
    BadAid(String),
    #[error("bad payload: {0}")]
    BadPayload(String),
    #[error("bad timestamp: {0}")]
    BadTimestamp(String),
}

/// One timestamped classic CAN data frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanFrame {
    timestamp: f64,
    aid: u16,
    dlc: u8,
    data: [u8; MAX_DLC],
    /// Set by the traffic simulator for injected frames. Never parsed from logs.
    pub injected: bool,
}

impl CanFrame {
    pub fn new(timestamp: f64, aid: u16, payload: &[u8]) -> Result<Self, LogError> {
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(LogError::BadTimestamp(timestamp.to_string()));
        }
        if aid > MAX_STANDARD_AID {
            return Err(LogError::BadAid(format!("{aid:#X} exceeds 0x7FF")));
        }
        if payload.len() > MAX_DLC {
            return Err(LogError::BadPayload(format!(
                "{} bytes exceeds {MAX_DLC}",
                payload.len()
            )));
        }
        let mut data = [0u8; MAX_DLC];
        data[..payload.len()].copy_from_slice(payload);
        Ok(Self {
            timestamp,
            aid,
            dlc: payload.len() as u8,
            data,
            injected: false,
        })
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn aid(&self) -> u16 {
        self.aid
    }

    pub fn dlc(&self) -> usize {
        self.dlc as usize
    }

    pub fn payload(&self) -> &[u8] {
        &self.data[..self.dlc as usize]
    }

    pub fn bits(&self) -> BitVector64 {
        payload_to_bits(self.payload())
    }

    /// Copy of this frame with a different timestamp.
    pub fn with_timestamp(mut self, timestamp: f64) -> Result<Self, LogError> {
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(LogError::BadTimestamp(timestamp.to_string()));
        }
        self.timestamp = timestamp;
        Ok(self)
    }
}

impl fmt::Display for CanFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}) can0 {:03X}#", self.timestamp, self.aid)?;
        for b in self.payload() {
            write!(f, "{b:02X}")?;
        }
        Ok(())
    }
}

/// A data field as 64 ordered bits.
///
/// Bit `k` is bit `7 - k % 8` of byte `k / 8`, so byte 0 fills bits 0..8
/// most-significant first. Internally this is the payload read as a
/// big-endian `u64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BitVector64(pub u64);

impl BitVector64 {
    pub const WIDTH: usize = 64;

    pub fn bit(self, k: usize) -> u8 {
        assert!(k < Self::WIDTH, "bit index {k} out of range");
        ((self.0 >> (63 - k)) & 1) as u8
    }

    pub fn from_bits(bits: &[u8; 64]) -> Self {
        let mut v = 0u64;
        for (k, &b) in bits.iter().enumerate() {
            assert!(b <= 1, "bit {k} is {b}, expected 0 or 1");
            v |= (b as u64) << (63 - k);
        }
        Self(v)
    }

    pub fn to_bits(self) -> [u8; 64] {
        std::array::from_fn(|k| self.bit(k))
    }

    /// Writes the bits as 0.0/1.0 into `out[..64]`.
    pub fn write_f64(self, out: &mut [f64]) {
        for (k, slot) in out[..Self::WIDTH].iter_mut().enumerate() {
            *slot = self.bit(k) as f64;
        }
    }

    pub fn to_f64(self) -> [f64; 64] {
        let mut out = [0.0; 64];
        self.write_f64(&mut out);
        out
    }

    pub fn to_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }
}

/// Maps a payload of up to eight bytes to 64 bits, zero-padding short payloads.
pub fn payload_to_bits(payload: &[u8]) -> BitVector64 {
    assert!(payload.len() <= MAX_DLC, "payload longer than 8 bytes");
    let mut bytes = [0u8; MAX_DLC];
    bytes[..payload.len()].copy_from_slice(payload);
    BitVector64(u64::from_be_bytes(bytes))
}

fn parse_timestamp(token: &str) -> Result<f64, LogError> {
    let inner = token
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| LogError::MalformedLine(format!("timestamp token {token:?}")))?;
    let (secs, frac) = inner
        .split_once('.')
        .ok_or_else(|| LogError::MalformedLine(format!("timestamp {inner:?} lacks fraction")))?;
    let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(secs) || !all_digits(frac) {
        return Err(LogError::MalformedLine(format!("timestamp {inner:?}")));
    }
    let t: f64 = inner
        .parse()
        .map_err(|_| LogError::MalformedLine(format!("timestamp {inner:?}")))?;
    if !t.is_finite() {
        return Err(LogError::BadTimestamp(inner.to_string()));
    }
    Ok(t)
}

fn parse_aid(text: &str) -> Result<u16, LogError> {
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(LogError::BadAid(text.to_string()));
    }
    // candump prints extended identifiers with 8 digits; those are rejected
    // even when the numeric value would fit in 11 bits.
    if text.len() > 3 {
        return Err(LogError::BadAid(format!("{text} is not a standard identifier")));
    }
    let aid = u16::from_str_radix(text, 16).map_err(|_| LogError::BadAid(text.to_string()))?;
    if aid > MAX_STANDARD_AID {
        return Err(LogError::BadAid(format!("{text} exceeds 7FF")));
    }
    Ok(aid)
}

fn parse_payload(text: &str) -> Result<Vec<u8>, LogError> {
    if !text.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(LogError::BadPayload(format!("{text:?} is not hex")));
    }
    if !text.len().is_multiple_of(2) {
        return Err(LogError::BadPayload(format!("{text:?} has odd length")));
    }
    if text.len() > 2 * MAX_DLC {
        return Err(LogError::BadPayload(format!("{text:?} longer than 8 bytes")));
    }
    (0..text.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&text[i..i + 2], 16)
                .map_err(|_| LogError::BadPayload(text.to_string()))
        })
        .collect()
}

/// Parses one candump record. The channel name is discarded.
pub fn parse_candump_line(line: &str) -> Result<CanFrame, LogError> {
    let mut tokens = line.split_whitespace();
    let (Some(ts), Some(_channel), Some(frame), None) =
        (tokens.next(), tokens.next(), tokens.next(), tokens.next())
    else {
        return Err(LogError::MalformedLine(line.trim().to_string()));
    };
    let timestamp = parse_timestamp(ts)?;
    let (aid_text, payload_text) = frame
        .split_once('#')
        .ok_or_else(|| LogError::MalformedLine(format!("frame token {frame:?} lacks '#'")))?;
    let aid = parse_aid(aid_text)?;
    let payload = parse_payload(payload_text)?;
    CanFrame::new(timestamp, aid, &payload)
}

/// Serializes a frame as a candump record on channel `can0` (no newline).
pub fn serialize_frame(frame: &CanFrame) -> String {
    let mut out = String::with_capacity(40);
    write!(out, "{frame}").expect("writing to a String cannot fail");
    out
}

/// A per-line parse failure; `line` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub error: LogError,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub frames: Vec<CanFrame>,
    pub errors: Vec<LineError>,
}

/// Reads a whole candump log. Malformed lines are collected, not fatal;
/// blank lines are ignored.
pub fn parse_log<R: BufRead>(source: R) -> io::Result<ParsedLog> {
    let mut log = ParsedLog::default();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_candump_line(&line) {
            Ok(frame) => log.frames.push(frame),
            Err(error) => log.errors.push(LineError {
                line: idx + 1,
                error,
            }),
        }
    }
    Ok(log)
}

pub fn write_log<W: Write>(mut sink: W, frames: &[CanFrame]) -> io::Result<()> {
    for frame in frames {
        writeln!(sink, "{frame}")?;
    }
    sink.flush()
}

/// Order-preserving subsequence of frames carrying `aid`.
pub fn filter_by_aid(frames: &[CanFrame], aid: u16) -> Vec<CanFrame> {
    frames.iter().filter(|f| f.aid == aid).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_full_frame() {
        let f = parse_candump_line("(141.000000) can0 0D0#1122334455667788").unwrap();
        assert_eq!(f.timestamp(), 141.0);
        assert_eq!(f.aid(), 0x0D0);
        assert_eq!(f.dlc(), 8);
        assert_eq!(f.payload(), &[0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x88]);
        assert!(!f.injected);
    }

    #[test]
    fn parses_short_frame() {
        let f = parse_candump_line("(0.000000) can0 244#00").unwrap();
        assert_eq!(f.timestamp(), 0.0);
        assert_eq!(f.aid(), 0x244);
        assert_eq!(f.payload(), &[0x00]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            parse_candump_line("not a frame"),
            Err(LogError::MalformedLine(_))
        ));
        assert!(matches!(
            parse_candump_line("(1.0) can0"),
            Err(LogError::MalformedLine(_))
        ));
        assert!(matches!(
            parse_candump_line("1.000000 can0 123#00"),
            Err(LogError::MalformedLine(_))
        ));
        assert!(matches!(
            parse_candump_line("(1.000000) can0 12300"),
            Err(LogError::MalformedLine(_))
        ));
    }

    #[test]
    fn rejects_bad_ids() {
        for line in [
            "(1.000000) can0 800#00",
            "(1.000000) can0 XYZ#00",
            "(1.000000) can0 #00",
            "(1.000000) can0 000000D0#00",
        ] {
            assert!(
                matches!(parse_candump_line(line), Err(LogError::BadAid(_))),
                "{line}"
            );
        }
    }

    #[test]
    fn rejects_bad_payloads() {
        for line in [
            "(1.000000) can0 123#ABC",
            "(1.000000) can0 123#112233445566778899",
            "(1.000000) can0 123#R",
            "(1.000000) can0 123##1AB",
        ] {
            assert!(
                matches!(parse_candump_line(line), Err(LogError::BadPayload(_))),
                "{line}"
            );
        }
    }

    #[test]
    fn serializes_candump_form() {
        let f = CanFrame::new(1.5, 0x0D0, &[0xAB, 0xCD]).unwrap();
        assert_eq!(serialize_frame(&f), "(1.500000) can0 0D0#ABCD");
        let empty = CanFrame::new(0.0, 0x7FF, &[]).unwrap();
        assert_eq!(serialize_frame(&empty), "(0.000000) can0 7FF#");
    }

    #[test]
    fn frame_constructor_enforces_invariants() {
        assert!(CanFrame::new(-1.0, 1, &[]).is_err());
        assert!(CanFrame::new(f64::NAN, 1, &[]).is_err());
        assert!(CanFrame::new(0.0, 0x800, &[]).is_err());
        assert!(CanFrame::new(0.0, 1, &[0; 9]).is_err());
    }

    #[test]
    fn bit_mapping_is_msb_first() {
        let b = payload_to_bits(&[0xFF, 0, 0, 0, 0, 0, 0, 0]);
        for k in 0..64 {
            assert_eq!(b.bit(k), u8::from(k < 8), "bit {k}");
        }
        let b = payload_to_bits(&[0x01]);
        for k in 0..64 {
            assert_eq!(b.bit(k), u8::from(k == 7), "bit {k}");
        }
        assert_eq!(payload_to_bits(&[]), BitVector64(0));
    }

    #[test]
    fn parse_log_collects_errors_with_line_numbers() {
        let text = "(0.000000) can0 100#01\n\n(0.010000) can0 100#0\n(0.020000) can0 100#03\n";
        let log = parse_log(text.as_bytes()).unwrap();
        assert_eq!(log.frames.len(), 2);
        assert_eq!(log.errors.len(), 1);
        assert_eq!(log.errors[0].line, 3);
        assert!(matches!(log.errors[0].error, LogError::BadPayload(_)));

        let empty = parse_log("".as_bytes()).unwrap();
        assert!(empty.frames.is_empty() && empty.errors.is_empty());
    }

    #[test]
    fn filter_keeps_order() {
        let a1 = CanFrame::new(0.0, 0xA, &[1]).unwrap();
        let b = CanFrame::new(0.1, 0xB, &[2]).unwrap();
        let a2 = CanFrame::new(0.2, 0xA, &[3]).unwrap();
        let frames = [a1, b, a2];
        assert_eq!(filter_by_aid(&frames, 0xA), vec![a1, a2]);
        assert!(filter_by_aid(&frames, 0xC).is_empty());
        assert_eq!(filter_by_aid(&[a1, a2], 0xA), vec![a1, a2]);
    }

    proptest! {
        #[test]
        fn bits_round_trip(bytes in proptest::array::uniform8(any::<u8>())) {
            let bv = payload_to_bits(&bytes);
            prop_assert_eq!(bv.to_bytes(), bytes);
            prop_assert_eq!(BitVector64::from_bits(&bv.to_bits()), bv);
        }

        #[test]
        fn short_payloads_collide_only_after_padding(
            a in proptest::collection::vec(any::<u8>(), 0..=8),
            b in proptest::collection::vec(any::<u8>(), 0..=8),
        ) {
            let pad = |v: &[u8]| { let mut p = [0u8; 8]; p[..v.len()].copy_from_slice(v); p };
            prop_assert_eq!(payload_to_bits(&a) == payload_to_bits(&b), pad(&a) == pad(&b));
        }
    }
}
