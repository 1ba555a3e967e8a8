//! C interface to the xane core library.
//!
//! Every call returns an [`XaneStatus`]; on failure a message for the
//! calling thread is available from [`xane_last_error`]. Handles are
//! opaque and freed with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use xane_core::audio::AudioBuffer;
use xane_core::features;
use xane_core::model::{self, ClassTask, ModelParams, RegressionTask};
use xane_core::rir::{self, Geometry, ImpulseResponse, RoomSpec};
use xane_core::truth;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XaneStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Format = 5,
    Panic = 6,
}

/// Loaded model checkpoint.
pub struct XaneModel {
    params: ModelParams,
}

/// Simulated room impulse response.
pub struct XaneRir {
    ir: ImpulseResponse,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XaneRoom {
    pub length_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub reflection_coeff: f64,
    /// Metres per second; 0 selects 343.
    pub speed_of_sound: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XaneReverbLabels {
    pub c50_db: f64,
    pub c5_db: f64,
    pub drr_db: f64,
    pub t60_ms: f64,
    pub room_volume_m3: f64,
    pub reflection_coeff: f64,
}

/// Number of regression outputs written by [`xane_model_predict`].
pub const XANE_REGRESSION_OUTPUTS: usize = 11;
/// Mel bands per feature frame.
pub const XANE_MEL_BANDS: usize = 80;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior nul"));
}

fn guard(f: impl FnOnce() -> Result<(), (XaneStatus, String)>) -> XaneStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            XaneStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside xane");
            XaneStatus::Panic
        }
    }
}

fn null() -> (XaneStatus, String) {
    (XaneStatus::NullPointer, "null pointer argument".into())
}

fn invalid(e: impl std::fmt::Display) -> (XaneStatus, String) {
    (XaneStatus::InvalidArgument, e.to_string())
}

fn model_err(e: model::ModelError) -> (XaneStatus, String) {
    let status = match e {
        model::ModelError::Io(_) => XaneStatus::Io,
        model::ModelError::InvalidConfig(_) | model::ModelError::ShapeMismatch { .. } => {
            XaneStatus::InvalidArgument
        }
        _ => XaneStatus::Format,
    };
    (status, e.to_string())
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize) -> Result<&'a [T], (XaneStatus, String)> {
    if ptr.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize) -> Result<&'a mut [T], (XaneStatus, String)> {
    if ptr.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn buffer(samples: &[f32]) -> Result<AudioBuffer, (XaneStatus, String)> {
    AudioBuffer::new(samples.iter().map(|&s| s as f64).collect()).map_err(invalid)
}

/// Message describing the last failed call on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn xane_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Schema version of the checkpoint format this library reads.
#[no_mangle]
pub extern "C" fn xane_checkpoint_version() -> u32 {
    model::CHECKPOINT_VERSION
}

/// Frames produced by [`xane_melfb`] for `len` samples.
#[no_mangle]
pub extern "C" fn xane_frame_count(len: usize) -> usize {
    features::frame_count(len)
}

/// Log-mel features of 16 kHz mono samples, row-major
/// `frames x XANE_MEL_BANDS` into `out` (capacity `out_len` values).
///
/// # Safety
/// `samples` must point to `len` floats and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn xane_melfb(
    samples: *const f32,
    len: usize,
    out: *mut f64,
    out_len: usize,
    frames: *mut usize,
) -> XaneStatus {
    guard(|| {
        let x = slice(samples, len)?;
        if frames.is_null() {
            return Err(null());
        }
        let mel = features::melfb(&buffer(x)?).map_err(invalid)?;
        *frames = mel.nrows();
        if out_len < mel.len() {
            return Err((
                XaneStatus::BufferTooSmall,
                format!("need {} values, got {out_len}", mel.len()),
            ));
        }
        let dst = slice_mut(out, out_len)?;
        for (d, s) in dst.iter_mut().zip(mel.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Loads a checkpoint into `*out`.
///
/// # Safety
/// `path` must be a nul-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn xane_model_load(path: *const c_char, out: *mut *mut XaneModel) -> XaneStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null());
        }
        let path = CStr::from_ptr(path).to_str().map_err(invalid)?;
        let (params, _) = model::load_checkpoint(Path::new(path)).map_err(model_err)?;
        *out = Box::into_raw(Box::new(XaneModel { params }));
        Ok(())
    })
}

/// Embedding dimension of a loaded model, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle from [`xane_model_load`].
#[no_mangle]
pub unsafe extern "C" fn xane_model_embed_dim(model: *const XaneModel) -> usize {
    model.as_ref().map(|m| m.params.config.embed_dim).unwrap_or(0)
}

/// Utterance embedding: mean over the one-second chunks of `samples`.
///
/// # Safety
/// `model` must be a live handle, `samples` must point to `len` floats and
/// `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn xane_model_embed(
    model: *const XaneModel,
    samples: *const f32,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> XaneStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(null)?;
        let x = slice(samples, len)?;
        let dim = m.params.config.embed_dim;
        if out_len < dim {
            return Err((XaneStatus::BufferTooSmall, format!("need {dim} values, got {out_len}")));
        }
        let dst = slice_mut(out, out_len)?;
        let chunks = features::extract_chunks(&buffer(x)?, "ffi").map_err(invalid)?;
        dst[..dim].iter_mut().for_each(|d| *d = 0.0);
        for c in &chunks {
            let o = m.params.forward(c).map_err(model_err)?;
            for (d, v) in dst.iter_mut().zip(o.embedding.iter()) {
                *d += v / chunks.len() as f64;
            }
        }
        Ok(())
    })
}

/// Predictions for one chunk of `rows x cols` row-major log-mel features.
/// `regression` receives [`XANE_REGRESSION_OUTPUTS`] values in original
/// units (NaN for disabled heads); `classes` receives the predicted noise,
/// codec and overlap classes (-1 for disabled heads).
///
/// # Safety
/// `model` must be a live handle, `features` must point to `rows * cols`
/// doubles, `regression` to 11 doubles and `classes` to 3 ints.
#[no_mangle]
pub unsafe extern "C" fn xane_model_predict(
    model: *const XaneModel,
    features: *const f64,
    rows: usize,
    cols: usize,
    regression: *mut f64,
    classes: *mut i32,
) -> XaneStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(null)?;
        let x = slice(features, rows.checked_mul(cols).ok_or_else(|| invalid("size overflow"))?)?;
        let reg = slice_mut(regression, XANE_REGRESSION_OUTPUTS)?;
        let cls = slice_mut(classes, 3)?;
        let view = ndarray::ArrayView2::from_shape((rows, cols), x).map_err(invalid)?;
        let out = m.params.forward_matrix(view).map_err(model_err)?;
        for (i, t) in RegressionTask::ALL.iter().enumerate() {
            reg[i] = out.regression[i]
                .map(|v| m.params.denormalize(*t, v))
                .unwrap_or(f64::NAN);
        }
        for (c, t) in cls.iter_mut().zip(ClassTask::ALL) {
            *c = out.predicted_class(t).map(|k| k as i32).unwrap_or(-1);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`xane_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn xane_model_free(model: *mut XaneModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Image-source impulse response of a shoebox room. `max_order` < 0
/// selects the order at which reflections fall below -80 dB.
///
/// # Safety
/// `room` must be readable, `source` and `mic` must point to 3 doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xane_rir_simulate(
    room: *const XaneRoom,
    source: *const f64,
    mic: *const f64,
    max_order: i32,
    duration_s: f64,
    out: *mut *mut XaneRir,
) -> XaneStatus {
    guard(|| {
        let r = room.as_ref().ok_or_else(null)?;
        let s = slice(source, 3)?;
        let m = slice(mic, 3)?;
        if out.is_null() {
            return Err(null());
        }
        let mut spec = RoomSpec::new(r.length_m, r.width_m, r.height_m, r.reflection_coeff).map_err(invalid)?;
        if r.speed_of_sound > 0.0 {
            spec.speed_of_sound = r.speed_of_sound;
        }
        let geom = Geometry {
            source_xyz: [s[0], s[1], s[2]],
            mic_xyz: [m[0], m[1], m[2]],
        };
        let order = if max_order < 0 {
            rir::default_max_order(spec.reflection_coeff)
        } else {
            max_order as usize
        };
        let ir = rir::simulate_rir(&spec, &geom, order, duration_s).map_err(invalid)?;
        *out = Box::into_raw(Box::new(XaneRir { ir }));
        Ok(())
    })
}

/// Number of taps, 0 for a null handle.
///
/// # Safety
/// `rir` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn xane_rir_len(rir: *const XaneRir) -> usize {
    rir.as_ref().map(|r| r.ir.taps.len()).unwrap_or(0)
}

/// Index of the direct-path tap.
///
/// # Safety
/// `rir` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn xane_rir_direct_index(rir: *const XaneRir) -> usize {
    rir.as_ref().map(|r| r.ir.direct_index).unwrap_or(0)
}

/// Copies `min(len, xane_rir_len)` taps into `out`.
///
/// # Safety
/// `rir` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn xane_rir_taps(rir: *const XaneRir, out: *mut f64, len: usize) -> XaneStatus {
    guard(|| {
        let r = rir.as_ref().ok_or_else(null)?;
        let dst = slice_mut(out, len)?;
        for (d, s) in dst.iter_mut().zip(&r.ir.taps) {
            *d = *s;
        }
        Ok(())
    })
}

/// Reverberation labels of a simulated response.
///
/// # Safety
/// `rir` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn xane_rir_labels(rir: *const XaneRir, out: *mut XaneReverbLabels) -> XaneStatus {
    guard(|| {
        let r = rir.as_ref().ok_or_else(null)?;
        let out = out.as_mut().ok_or_else(null)?;
        let l = truth::reverb_labels(&r.ir).map_err(invalid)?;
        *out = XaneReverbLabels {
            c50_db: l.c50_db,
            c5_db: l.c5_db,
            drr_db: l.drr_db,
            t60_ms: l.t60_ms,
            room_volume_m3: l.room_volume_m3,
            reflection_coeff: l.reflection_coeff,
        };
        Ok(())
    })
}

/// # Safety
/// `rir` must be null or a handle from [`xane_rir_simulate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn xane_rir_free(rir: *mut XaneRir) {
    if !rir.is_null() {
        drop(Box::from_raw(rir));
    }
}
