//! C ABI over the canpredict detector.
//!
//! All functions return a [`CanpStatus`]; on failure a message is available
//! from [`canp_last_error`] on the same thread. Handles are opaque and must
//! be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use canpredict::can_log::{parse_candump_line, CanFrame, LogError};
use canpredict::lstm::{load_model, LstmError};
use canpredict::scorer::{GaussianErrorModel, StreamScorer};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CanpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    IoError = 4,
    ModelError = 5,
    NumericError = 6,
    Panic = 7,
}

/// One classic CAN frame. Only the first `dlc` bytes of `data` are used.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanpFrame {
    pub timestamp: f64,
    pub aid: u16,
    pub dlc: u8,
    pub data: [u8; 8],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CanpScore {
    pub timestamp: f64,
    pub aid: u16,
    pub e: f64,
    pub z: f64,
    pub p: f64,
}

/// Streaming detector for one AID: a trained model plus its error model.
pub struct CanpDetector {
    aid: u16,
    scorer: StreamScorer<'static>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: CanpStatus, msg: impl Into<String>) -> CanpStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> CanpStatus) -> CanpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(CanpStatus::Panic, "internal panic"),
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, CanpStatus> {
    if p.is_null() {
        return Err(fail(CanpStatus::NullPointer, "null path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(CanpStatus::InvalidArgument, "path is not UTF-8"))
}

fn lstm_status(e: &LstmError) -> CanpStatus {
    match e {
        LstmError::Io(_) => CanpStatus::IoError,
        LstmError::NonFinite(_) => CanpStatus::NumericError,
        _ => CanpStatus::ModelError,
    }
}

fn to_c_frame(f: &CanFrame) -> CanpFrame {
    let mut data = [0u8; 8];
    data[..f.dlc()].copy_from_slice(f.payload());
    CanpFrame {
        timestamp: f.timestamp(),
        aid: f.aid(),
        dlc: f.dlc() as u8,
        data,
    }
}

fn from_c_frame(f: &CanpFrame) -> Result<CanFrame, LogError> {
    if f.dlc > 8 {
        return Err(LogError::BadPayload(format!("dlc {}", f.dlc)));
    }
    CanFrame::new(f.timestamp, f.aid, &f.data[..f.dlc as usize])
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn canp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn canp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses one candump line such as `(1.000000) can0 0D0#1122`.
///
/// # Safety
/// `line` must be a NUL-terminated string and `out` a writable frame.
#[no_mangle]
pub unsafe extern "C" fn canp_parse_candump_line(line: *const c_char, out: *mut CanpFrame) -> CanpStatus {
    guard(|| {
        if line.is_null() || out.is_null() {
            return fail(CanpStatus::NullPointer, "null argument");
        }
        let Ok(text) = CStr::from_ptr(line).to_str() else {
            return fail(CanpStatus::ParseError, "line is not UTF-8");
        };
        match parse_candump_line(text) {
            Ok(frame) => {
                *out = to_c_frame(&frame);
                CanpStatus::Ok
            }
            Err(e) => fail(CanpStatus::ParseError, e.to_string()),
        }
    })
}

/// Loads a model file and an error-model file produced by `canpredict train`.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable. On success
/// `*out` owns a detector that must be released with [`canp_detector_free`].
#[no_mangle]
pub unsafe extern "C" fn canp_detector_open(
    model_path: *const c_char,
    errmodel_path: *const c_char,
    aid: u16,
    out: *mut *mut CanpDetector,
) -> CanpStatus {
    guard(|| {
        if out.is_null() {
            return fail(CanpStatus::NullPointer, "null output handle");
        }
        *out = ptr::null_mut();
        if aid > 0x7FF {
            return fail(CanpStatus::InvalidArgument, format!("aid {aid:#X} exceeds 11 bits"));
        }
        let (model_path, err_path) = match (path_arg(model_path), path_arg(errmodel_path)) {
            (Ok(m), Ok(e)) => (m, e),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let params = match load_model(&model_path) {
            Ok(p) => p,
            Err(e) => return fail(lstm_status(&e), format!("{}: {e}", model_path.display())),
        };
        let text = match std::fs::read_to_string(&err_path) {
            Ok(t) => t,
            Err(e) => return fail(CanpStatus::IoError, format!("{}: {e}", err_path.display())),
        };
        let model = match GaussianErrorModel::from_text(&text) {
            Ok(m) => m,
            Err(e) => return fail(CanpStatus::ModelError, format!("{}: {e}", err_path.display())),
        };
        *out = Box::into_raw(Box::new(CanpDetector {
            aid,
            scorer: StreamScorer::owned(params, model),
        }));
        CanpStatus::Ok
    })
}

/// # Safety
/// `det` must be null or a handle from [`canp_detector_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn canp_detector_free(det: *mut CanpDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Context length: frames needed before the first score.
///
/// # Safety
/// `det` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn canp_detector_window(det: *const CanpDetector) -> u32 {
    det.as_ref().map_or(0, |d| d.scorer.window() as u32)
}

/// Feeds one frame. Frames for other AIDs are ignored. `*scored` is set to
/// 1 and `*out` filled once the context window is full, otherwise 0.
///
/// # Safety
/// `det` must be a live handle; `frame`, `out` and `scored` must be valid.
#[no_mangle]
pub unsafe extern "C" fn canp_detector_push(
    det: *mut CanpDetector,
    frame: *const CanpFrame,
    out: *mut CanpScore,
    scored: *mut u8,
) -> CanpStatus {
    guard(|| {
        if det.is_null() || frame.is_null() || out.is_null() || scored.is_null() {
            return fail(CanpStatus::NullPointer, "null argument");
        }
        *scored = 0;
        let det = &mut *det;
        let frame = match from_c_frame(&*frame) {
            Ok(f) => f,
            Err(e) => return fail(CanpStatus::InvalidArgument, e.to_string()),
        };
        if frame.aid() != det.aid {
            return CanpStatus::Ok;
        }
        if let Some(s) = det.scorer.push(&frame) {
            *out = CanpScore {
                timestamp: s.timestamp,
                aid: s.aid,
                e: s.e,
                z: s.z,
                p: s.p,
            };
            *scored = 1;
        }
        CanpStatus::Ok
    })
}

/// Clears the buffered context.
///
/// # Safety
/// `det` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn canp_detector_reset(det: *mut CanpDetector) -> CanpStatus {
    match det.as_mut() {
        Some(d) => {
            d.scorer.reset();
            CanpStatus::Ok
        }
        None => fail(CanpStatus::NullPointer, "null handle"),
    }
}

/// Scores a raw prediction error against the detector's error model.
///
/// # Safety
/// `det` must be a live handle; `z` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn canp_detector_p_value(
    det: *const CanpDetector,
    e: f64,
    z: *mut f64,
    p: *mut f64,
) -> CanpStatus {
    if det.is_null() || z.is_null() || p.is_null() {
        return fail(CanpStatus::NullPointer, "null argument");
    }
    if !e.is_finite() {
        return fail(CanpStatus::NumericError, format!("non-finite error {e}"));
    }
    let (zz, pp) = (*det).scorer.error_model().p_value(e);
    *z = zz;
    *p = pp;
    CanpStatus::Ok
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_conversion_round_trips() {
        let f = CanFrame::new(1.5, 0x123, &[1, 2, 3]).unwrap();
        let c = to_c_frame(&f);
        assert_eq!(c.dlc, 3);
        assert_eq!(c.data, [1, 2, 3, 0, 0, 0, 0, 0]);
        assert_eq!(from_c_frame(&c).unwrap(), f);
        let bad = CanpFrame { dlc: 12, ..c };
        assert!(from_c_frame(&bad).is_err());
    }

    #[test]
    fn errors_are_reported() {
        let mut frame = CanpFrame {
            timestamp: 0.0,
            aid: 0,
            dlc: 0,
            data: [0; 8],
        };
        let line = CString::new("garbage").unwrap();
        let status = unsafe { canp_parse_candump_line(line.as_ptr(), &mut frame) };
        assert_eq!(status, CanpStatus::ParseError);
        let msg = unsafe { CStr::from_ptr(canp_last_error()) };
        assert!(!msg.to_bytes().is_empty());
        assert_eq!(unsafe { canp_parse_candump_line(ptr::null(), &mut frame) }, CanpStatus::NullPointer);
    }
}
