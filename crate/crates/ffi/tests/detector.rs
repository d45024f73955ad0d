use std::ffi::{CStr, CString};
use std::ptr;

use canpredict::dataset::build_windows;
use canpredict::lstm::{init_model, save_model, train, ModelConfig};
use canpredict::scorer::{dataset_errors, fit_error_model, score_stream};
use canpredict::simulator::{Archetype, TraceSpec};
use canpredict_ffi::*;

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn streaming_matches_batch_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let spec = TraceSpec {
        duration: 3.0,
        rate: 100.0,
        seed: 5,
    };
    let frames = Archetype::WheelSpeed.generate(&spec, 0x0D0).unwrap();
    let cfg = ModelConfig {
        epochs: 2,
        ..ModelConfig::tiny(8)
    };
    let data = build_windows(&frames, cfg.window);
    let (params, _) = train(init_model(&cfg, 1).unwrap(), &data).unwrap();
    let err = fit_error_model(&dataset_errors(&params, &data)).unwrap();
    let model_path = dir.path().join("m.bin");
    let err_path = dir.path().join("e.txt");
    save_model(&params, &model_path).unwrap();
    std::fs::write(&err_path, err.to_text()).unwrap();
    let expected = score_stream(&params, &err, &frames);

    let mut det: *mut CanpDetector = ptr::null_mut();
    let status = unsafe { canp_detector_open(cstr(&model_path).as_ptr(), cstr(&err_path).as_ptr(), 0x0D0, &mut det) };
    assert_eq!(status, CanpStatus::Ok);
    assert_eq!(unsafe { canp_detector_window(det) }, 10);

    let mut got = Vec::new();
    for f in &frames {
        let line = CString::new(canpredict::can_log::serialize_frame(f)).unwrap();
        let mut cf = CanpFrame {
            timestamp: 0.0,
            aid: 0,
            dlc: 0,
            data: [0; 8],
        };
        assert_eq!(unsafe { canp_parse_candump_line(line.as_ptr(), &mut cf) }, CanpStatus::Ok);
        let other = CanpFrame { aid: 0x100, ..cf };
        let mut score = CanpScore::default();
        let mut scored = 0u8;
        assert_eq!(unsafe { canp_detector_push(det, &other, &mut score, &mut scored) }, CanpStatus::Ok);
        assert_eq!(scored, 0);
        assert_eq!(unsafe { canp_detector_push(det, &cf, &mut score, &mut scored) }, CanpStatus::Ok);
        if scored == 1 {
            got.push(score);
        }
    }
    assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(&expected) {
        assert_eq!(g.p, e.p);
        assert_eq!(g.e, e.e);
        assert_eq!(g.timestamp, e.timestamp);
    }

    let (mut z, mut p) = (0.0, 0.0);
    assert_eq!(unsafe { canp_detector_p_value(det, err.mu, &mut z, &mut p) }, CanpStatus::Ok);
    assert!((p - 0.5).abs() < 1e-9);
    assert_eq!(unsafe { canp_detector_reset(det) }, CanpStatus::Ok);
    unsafe { canp_detector_free(det) };
}

#[test]
fn open_failures_set_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cstr(&dir.path().join("missing.bin"));
    let mut det: *mut CanpDetector = ptr::null_mut();
    let status = unsafe { canp_detector_open(missing.as_ptr(), missing.as_ptr(), 0x0D0, &mut det) };
    assert_eq!(status, CanpStatus::IoError);
    assert!(det.is_null());
    let msg = unsafe { CStr::from_ptr(canp_last_error()) }.to_str().unwrap();
    assert!(msg.contains("missing.bin"), "{msg}");

    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a model").unwrap();
    let status = unsafe { canp_detector_open(cstr(&junk).as_ptr(), missing.as_ptr(), 0x0D0, &mut det) };
    assert_eq!(status, CanpStatus::ModelError);

    let status = unsafe { canp_detector_open(missing.as_ptr(), missing.as_ptr(), 0x800, &mut det) };
    assert_eq!(status, CanpStatus::InvalidArgument);
    assert_eq!(
        unsafe { canp_detector_open(ptr::null(), missing.as_ptr(), 1, &mut det) },
        CanpStatus::NullPointer
    );
    unsafe { canp_detector_free(ptr::null_mut()) };
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/canpredict.h")).unwrap();
    for name in [
        "canp_version",
        "canp_last_error",
        "canp_parse_candump_line",
        "canp_detector_open",
        "canp_detector_push",
        "canp_detector_free",
        "CANP_STATUS_PARSE_ERROR",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let v = unsafe { CStr::from_ptr(canp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/canpredict.h");
    match std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler; skipped"),
    }
}
