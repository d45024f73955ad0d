use canpredict::can_log::{parse_candump_line, parse_log, serialize_frame, write_log, CanFrame, LogError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_frame(rng: &mut ChaCha8Rng) -> CanFrame {
    let micros: u64 = rng.random_range(0..10_000_000_000);
    let t = micros as f64 / 1e6;
    let dlc = rng.random_range(0..=8);
    let payload: Vec<u8> = (0..dlc).map(|_| rng.random()).collect();
    CanFrame::new(t, rng.random_range(0..=0x7FF), &payload).unwrap()
}

#[test]
fn thousand_random_frames_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let frames: Vec<CanFrame> = (0..1000).map(|_| random_frame(&mut rng)).collect();
    for f in &frames {
        let back = parse_candump_line(&serialize_frame(f)).unwrap();
        assert_eq!(back.timestamp().to_bits(), f.timestamp().to_bits());
        assert_eq!(back.aid(), f.aid());
        assert_eq!(back.payload(), f.payload());
    }
    let mut buf = Vec::new();
    write_log(&mut buf, &frames).unwrap();
    let parsed = parse_log(buf.as_slice()).unwrap();
    assert!(parsed.errors.is_empty());
    assert_eq!(parsed.frames, frames);
}

fn kinds(corpus: &str) -> Vec<(usize, std::mem::Discriminant<LogError>)> {
    let parsed = parse_log(corpus.as_bytes()).unwrap();
    parsed
        .errors
        .iter()
        .map(|e| (e.line, std::mem::discriminant(&e.error)))
        .collect()
}

#[test]
fn structurally_malformed_corpus() {
    let corpus = "(0.000000) can0 0D0#00\nnot a frame\n(1.5) can0\n0.100000 can0 0D0#00\n(0.1) can0 0D0 extra\n(0.000000) can0 0D000\n";
    let malformed = std::mem::discriminant(&LogError::MalformedLine(String::new()));
    assert_eq!(kinds(corpus), (2..=6).map(|l| (l, malformed)).collect::<Vec<_>>());
}

#[test]
fn bad_aid_corpus() {
    let corpus = "(0.000000) can0 800#00\n(0.000000) can0 XYZ#00\n(0.000000) can0 #00\n(0.000000) can0 7FF#00\n(0.000000) can0 000007FF#00\n";
    let bad = std::mem::discriminant(&LogError::BadAid(String::new()));
    assert_eq!(kinds(corpus), vec![(1, bad), (2, bad), (3, bad), (5, bad)]);
}

#[test]
fn bad_payload_corpus() {
    let corpus = "(0.000000) can0 244#0\n(0.000000) can0 244#112233445566778899\n(0.000000) can0 244#ZZ\n(0.000000) can0 244#\n(0.000000) can0 244#ABC\n";
    let bad = std::mem::discriminant(&LogError::BadPayload(String::new()));
    assert_eq!(kinds(corpus), vec![(1, bad), (2, bad), (3, bad), (5, bad)]);
}

proptest! {
    #[test]
    fn serialize_parse_is_identity(micros in 0u64..100_000_000_000, aid in 0u16..=0x7FF, payload in proptest::collection::vec(any::<u8>(), 0..=8)) {
        let f = CanFrame::new(micros as f64 / 1e6, aid, &payload).unwrap();
        let back = parse_candump_line(&serialize_frame(&f)).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn parser_never_panics(line in "\\PC{0,60}") {
        let _ = parse_candump_line(&line);
    }
}
