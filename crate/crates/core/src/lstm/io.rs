//! Binary model container.
//!
//! All integers and reals are little-endian.
//!
//! ```text
//! "CANM"                      4-byte magic
//! u32 version                 currently 1
//! u32 input_width
//! u32 window
//! u32 layer_count             then one u32 hidden width per layer
//! u32 dense_hidden
//! u32 output_width
//! f64 dropout_rate
//! u32 output_activation       0 = sigmoid, 1 = softmax
//! u32 batch_size
//! f64 learning_rate
//! u32 epochs
//! u64 seed
//! f64 clip_norm
//! u64 parameter_count
//! f64 × parameter_count
//! ```
//!
//! Parameters are written per LSTM layer, and within a layer per gate in
//! the order input, forget, output, candidate: that gate's `W` (hidden ×
//! input, row-major), `U` (hidden × hidden), then `b`. Dense layer 1 `W`
//! (dense_hidden × top hidden) and `b` follow, then dense layer 2 `W`
//! (64 × dense_hidden) and `b`.

use std::fs;
use std::path::Path;

use super::config::{ModelConfig, OutputActivation};
use super::params::ModelParams;
use super::LstmError;

pub const MAGIC: &[u8; 4] = b"CANM";
pub const FORMAT_VERSION: u32 = 1;

fn flat_parameters(params: &ModelParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.parameter_count());
    for layer in &params.lstm {
        for g in 0..4 {
            out.extend_from_slice(layer.gate_w(g));
            out.extend_from_slice(layer.gate_u(g));
            out.extend_from_slice(layer.gate_b(g));
        }
    }
    for d in [&params.dense1, &params.dense2] {
        out.extend_from_slice(&d.w);
        out.extend_from_slice(&d.b);
    }
    out
}

fn fill_parameters(params: &mut ModelParams, flat: &[f64]) {
    let mut pos = 0;
    let mut take = |dst: &mut [f64]| {
        dst.copy_from_slice(&flat[pos..pos + dst.len()]);
        pos += dst.len();
    };
    for layer in &mut params.lstm {
        let (wn, un, h) = (layer.hidden * layer.input, layer.hidden * layer.hidden, layer.hidden);
        for g in 0..4 {
            take(&mut layer.w[g * wn..(g + 1) * wn]);
            take(&mut layer.u[g * un..(g + 1) * un]);
            take(&mut layer.b[g * h..(g + 1) * h]);
        }
    }
    for d in [&mut params.dense1, &mut params.dense2] {
        take(&mut d.w);
        take(&mut d.b);
    }
}

fn u32_field(v: usize, name: &str) -> Result<u32, LstmError> {
    u32::try_from(v).map_err(|_| LstmError::InvalidConfig(format!("{name} {v} too large to store")))
}

pub fn encode_model(params: &ModelParams) -> Result<Vec<u8>, LstmError> {
    let cfg = &params.config;
    params.check_shapes()?;
    let flat = flat_parameters(params);
    let mut out = Vec::with_capacity(128 + 8 * flat.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let put_u32 = |out: &mut Vec<u8>, v: usize, name: &str| -> Result<(), LstmError> {
        out.extend_from_slice(&u32_field(v, name)?.to_le_bytes());
        Ok(())
    };
    put_u32(&mut out, cfg.input_width, "input_width")?;
    put_u32(&mut out, cfg.window, "window")?;
    put_u32(&mut out, cfg.lstm_hidden.len(), "layer count")?;
    for &h in &cfg.lstm_hidden {
        put_u32(&mut out, h, "lstm_hidden")?;
    }
    put_u32(&mut out, cfg.dense_hidden, "dense_hidden")?;
    put_u32(&mut out, cfg.output_width, "output_width")?;
    out.extend_from_slice(&cfg.dropout_rate.to_le_bytes());
    let act = match cfg.output_activation {
        OutputActivation::Sigmoid => 0u32,
        OutputActivation::Softmax => 1u32,
    };
    out.extend_from_slice(&act.to_le_bytes());
    put_u32(&mut out, cfg.batch_size, "batch_size")?;
    out.extend_from_slice(&cfg.learning_rate.to_le_bytes());
    put_u32(&mut out, cfg.epochs, "epochs")?;
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&cfg.clip_norm.to_le_bytes());
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], LstmError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            LstmError::SizeMismatch(format!(
                "file ends at byte {} while reading {n} bytes at {}",
                self.buf.len(),
                self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, LstmError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize, LstmError> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64, LstmError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, LstmError> {
        Ok(f64::from_bits(self.u64()?))
    }
}

pub fn decode_model(buf: &[u8]) -> Result<ModelParams, LstmError> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.bytes(4).map_err(|_| LstmError::BadMagic)?;
    if magic != MAGIC {
        return Err(LstmError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(LstmError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let input_width = r.usize()?;
    let window = r.usize()?;
    let layers = r.usize()?;
    if layers > 64 {
        return Err(LstmError::SizeMismatch(format!("implausible layer count {layers}")));
    }
    let lstm_hidden = (0..layers).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
    let dense_hidden = r.usize()?;
    let output_width = r.usize()?;
    let dropout_rate = r.f64()?;
    let output_activation = match r.u32()? {
        0 => OutputActivation::Sigmoid,
        1 => OutputActivation::Softmax,
        other => {
            return Err(LstmError::InvalidConfig(format!("unknown activation code {other}")))
        }
    };
    let config = ModelConfig {
        input_width,
        window,
        lstm_hidden,
        dense_hidden,
        output_width,
        dropout_rate,
        output_activation,
        batch_size: r.usize()?,
        learning_rate: r.f64()?,
        epochs: r.usize()?,
        seed: r.u64()?,
        clip_norm: r.f64()?,
    };
    config.validate()?;
    let count = r.u64()?;
    let mut params = ModelParams::zeros(&config);
    if count != params.parameter_count() as u64 {
        return Err(LstmError::SizeMismatch(format!(
            "header declares {count} parameters, config implies {}",
            params.parameter_count()
        )));
    }
    let raw = r.bytes(8 * count as usize)?;
    if r.pos != buf.len() {
        return Err(LstmError::SizeMismatch(format!(
            "{} trailing bytes after parameters",
            buf.len() - r.pos
        )));
    }
    let flat: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    fill_parameters(&mut params, &flat);
    Ok(params)
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<(), LstmError> {
    let bytes = encode_model(params)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams, LstmError> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::params::init_model;

    fn sample() -> ModelParams {
        let cfg = ModelConfig {
            lstm_hidden: vec![3, 4, 2],
            dense_hidden: 5,
            output_activation: OutputActivation::Softmax,
            seed: 99,
            ..ModelConfig::default()
        };
        init_model(&cfg, 17).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let bytes = encode_model(&p).unwrap();
        assert_eq!(decode_model(&bytes).unwrap(), p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.canm");
        save_model(&p, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), p);
    }

    #[test]
    fn layout_starts_with_header_and_gate_order() {
        let p = sample();
        let bytes = encode_model(&p).unwrap();
        assert_eq!(&bytes[..4], b"CANM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        // header: magic, version, 3 u32, 3 widths, 2 u32, f64, u32, u32, f64, u32, u64, f64, u64
        let header = 4 + 4 + 12 + 12 + 8 + 8 + 4 + 4 + 8 + 4 + 8 + 8 + 8;
        let first = f64::from_le_bytes(bytes[header..header + 8].try_into().unwrap());
        assert_eq!(first, p.lstm[0].gate_w(0)[0]);
        // forget gate block of layer 0 starts after the whole input gate (W, U, b).
        let l0 = &p.lstm[0];
        let skip = l0.hidden * l0.input + l0.hidden * l0.hidden + l0.hidden;
        let at = header + 8 * skip;
        let v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        assert_eq!(v, l0.gate_w(1)[0]);
        assert_eq!(bytes.len(), header + 8 * p.parameter_count());
    }

    #[test]
    fn truncated_file_is_size_mismatch() {
        let bytes = encode_model(&sample()).unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            assert!(matches!(
                decode_model(&bytes[..cut]),
                Err(LstmError::SizeMismatch(_))
            ));
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_model(&long), Err(LstmError::SizeMismatch(_))));
    }

    #[test]
    fn wrong_magic_and_version() {
        let mut bytes = encode_model(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_model(&bytes), Err(LstmError::BadMagic)));
        assert!(matches!(decode_model(b"CA"), Err(LstmError::BadMagic)));
        let mut bytes = encode_model(&sample()).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_model(&bytes),
            Err(LstmError::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_model(Path::new("/nonexistent/model.canm")),
            Err(LstmError::Io(_))
        ));
    }
}
