//! Supervised windows over one AID's data-field sequence: the previous
//! `window` payloads predict the next one.

use thiserror::Error;

use crate::can_log::{BitVector64, CanFrame};

/// Number of preceding data fields used as model context.
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("train fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedExample {
    /// Context rows, oldest first.
    pub x: Vec<BitVector64>,
    pub y: BitVector64,
    pub target_timestamp: f64,
    pub target_injected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub aid: Option<u16>,
    pub window: usize,
    pub examples: Vec<WindowedExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Slides a stride-1 window over `frames`. Example `i` uses frames
/// `i..i+window` as context and frame `i+window` as label. Timestamps play
/// no part beyond being copied onto the example.
///
/// Panics if `frames` mixes arbitration IDs or `window` is zero.
pub fn build_windows(frames: &[CanFrame], window: usize) -> Dataset {
    assert!(window >= 1, "window must be at least 1");
    let aid = frames.first().map(CanFrame::aid);
    assert!(
        frames.iter().all(|f| Some(f.aid()) == aid),
        "build_windows expects a single-AID frame sequence"
    );
    let bits: Vec<BitVector64> = frames.iter().map(CanFrame::bits).collect();
    let examples = (window..frames.len())
        .map(|t| WindowedExample {
            x: bits[t - window..t].to_vec(),
            y: bits[t],
            target_timestamp: frames[t].timestamp(),
            target_injected: frames[t].injected,
        })
        .collect();
    Dataset {
        aid,
        window,
        examples,
    }
}

/// Chronological split: the first `floor(N * train_fraction)` examples train,
/// the rest are held out.
pub fn split_chronological(
    ds: &Dataset,
    train_fraction: f64,
) -> Result<(Dataset, Dataset), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(DatasetError::BadFraction(train_fraction));
    }
    let cut = ((ds.len() as f64) * train_fraction).floor() as usize;
    let cut = cut.min(ds.len());
    let part = |examples: &[WindowedExample]| Dataset {
        aid: ds.aid,
        window: ds.window,
        examples: examples.to_vec(),
    };
    Ok((part(&ds.examples[..cut]), part(&ds.examples[cut..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize) -> Vec<CanFrame> {
        (0..n)
            .map(|i| CanFrame::new(i as f64 * 0.01, 0x0D0, &(i as u64).to_be_bytes()).unwrap())
            .collect()
    }

    #[test]
    fn window_counts() {
        assert_eq!(build_windows(&frames(11), 10).len(), 1);
        assert_eq!(build_windows(&frames(10), 10).len(), 0);
        assert_eq!(build_windows(&frames(15), 10).len(), 5);
        assert_eq!(build_windows(&[], 10).len(), 0);
    }

    #[test]
    fn label_is_eleventh_frame() {
        let fs = frames(11);
        let ds = build_windows(&fs, 10);
        let ex = &ds.examples[0];
        assert_eq!(ex.y, fs[10].bits());
        assert_eq!(ex.x.len(), 10);
        assert_eq!(ex.x[9], fs[9].bits());
        assert_eq!(ex.x[0], fs[0].bits());
        assert_eq!(ex.target_timestamp, fs[10].timestamp());
    }

    #[test]
    fn labels_reproduce_sequence_and_flags() {
        let mut fs = frames(40);
        fs[25].injected = true;
        let ds = build_windows(&fs, 10);
        let labels: Vec<_> = ds.examples.iter().map(|e| e.y).collect();
        let expected: Vec<_> = fs[10..].iter().map(CanFrame::bits).collect();
        assert_eq!(labels, expected);
        let flagged: Vec<_> = ds
            .examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.target_injected)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(flagged, vec![15]);
    }

    #[test]
    fn split_uses_floor() {
        let ds = build_windows(&frames(110), 10);
        let (a, b) = split_chronological(&ds, 0.9).unwrap();
        assert_eq!((a.len(), b.len()), (90, 10));
        let (a, b) = split_chronological(&ds, 1.0).unwrap();
        assert_eq!((a.len(), b.len()), (100, 0));
        let ds = build_windows(&frames(15), 10);
        let (a, b) = split_chronological(&ds, 0.5).unwrap();
        assert_eq!((a.len(), b.len()), (2, 3));
        assert_eq!(a.examples[..], ds.examples[..2]);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let ds = build_windows(&frames(20), 10);
        for f in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(split_chronological(&ds, f).is_err());
        }
    }

    #[test]
    #[should_panic(expected = "single-AID")]
    fn mixed_aids_panic() {
        let a = CanFrame::new(0.0, 1, &[]).unwrap();
        let b = CanFrame::new(0.0, 2, &[]).unwrap();
        build_windows(&[a, b], 1);
    }
}
