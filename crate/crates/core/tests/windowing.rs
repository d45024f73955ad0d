use canpredict::can_log::CanFrame;
use canpredict::dataset::{build_windows, split_chronological, DEFAULT_WINDOW};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frames(n: usize, seed: u64) -> Vec<CanFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| CanFrame::new(i as f64 * 0.01, 0x1A0, &rng.random::<u64>().to_be_bytes()).unwrap())
        .collect()
}

#[test]
fn dataset_size_law_over_100_trials() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..100 {
        let n = rng.random_range(0..=500);
        let ds = build_windows(&frames(n, trial), DEFAULT_WINDOW);
        assert_eq!(ds.len(), n.saturating_sub(DEFAULT_WINDOW), "n = {n}");
    }
}

proptest! {
    #[test]
    fn windows_are_consecutive_payloads(n in 0usize..120, seed in any::<u64>()) {
        let fs = frames(n, seed);
        let ds = build_windows(&fs, DEFAULT_WINDOW);
        prop_assert_eq!(ds.len(), n.saturating_sub(DEFAULT_WINDOW));
        for (i, ex) in ds.examples.iter().enumerate() {
            prop_assert_eq!(ex.x.len(), DEFAULT_WINDOW);
            for (k, x) in ex.x.iter().enumerate() {
                prop_assert_eq!(*x, fs[i + k].bits());
            }
            prop_assert_eq!(ex.y, fs[i + DEFAULT_WINDOW].bits());
            prop_assert_eq!(ex.target_timestamp, fs[i + DEFAULT_WINDOW].timestamp());
        }
    }

    #[test]
    fn split_partitions_in_order(n in 11usize..200, frac in 0.01f64..=1.0) {
        let ds = build_windows(&frames(n, 1), DEFAULT_WINDOW);
        let (a, b) = split_chronological(&ds, frac).unwrap();
        prop_assert_eq!(a.len(), (ds.len() as f64 * frac).floor() as usize);
        prop_assert_eq!(a.len() + b.len(), ds.len());
        let joined: Vec<_> = a.examples.iter().chain(&b.examples).cloned().collect();
        prop_assert_eq!(joined, ds.examples);
    }
}
