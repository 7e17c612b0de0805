//! C ABI for the realism metric.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible call
//! returns a [`PcrealStatus`]; on failure the message (and, for malformed
//! files, the byte offset) of the last error on the calling thread can be
//! read with [`pcreal_last_error_message`] and [`pcreal_last_error_offset`].
//! Panics never unwind into C; they are reported as
//! `PCREAL_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pcreal_core::net::{Checkpoint, Init, MetricModel, ModelConfig};
use pcreal_core::pcgen::DatasetSuite;
use pcreal_core::score::{interpolate, score_cloud, QueryScores};
use pcreal_core::{Error, PointCloud};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcrealStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Malformed = 4,
    Empty = 5,
    UnknownKey = 6,
    Shape = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

/// Trained (or freshly initialised) metric network.
pub struct PcrealModel {
    inner: MetricModel<f32>,
}

/// A point cloud.
pub struct PcrealCloud {
    inner: PointCloud,
}

/// Per-query and per-scene scores of one cloud.
pub struct PcrealScores {
    inner: QueryScores,
}

struct LastError {
    message: CString,
    offset: i64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<LastError>> = const { RefCell::new(None) };
}

fn set_error(status: PcrealStatus, message: String, offset: i64) -> PcrealStatus {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(LastError { message, offset }));
    status
}

fn report(err: Error) -> PcrealStatus {
    let (status, offset) = match &err {
        Error::Malformed { offset, .. } => (PcrealStatus::Malformed, *offset as i64),
        Error::Io(_) => (PcrealStatus::Io, -1),
        Error::Empty(_) => (PcrealStatus::Empty, -1),
        Error::UnknownKey(_) => (PcrealStatus::UnknownKey, -1),
        Error::Shape(_) => (PcrealStatus::Shape, -1),
        Error::Json(_) => (PcrealStatus::Malformed, -1),
        _ => (PcrealStatus::InvalidArgument, -1),
    };
    set_error(status, err.to_string(), offset)
}

fn guard(f: impl FnOnce() -> Result<(), PcrealStatus>) -> PcrealStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PcrealStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => set_error(PcrealStatus::Internal, "internal panic".into(), -1),
    }
}

fn null(what: &str) -> PcrealStatus {
    set_error(PcrealStatus::NullPointer, format!("{what} is null"), -1)
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, PcrealStatus> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| set_error(PcrealStatus::InvalidArgument, "path is not UTF-8".into(), -1))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, PcrealStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), PcrealStatus> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pcreal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last error on this thread, or null. Valid until the next
/// call into the library on the same thread.
#[no_mangle]
pub extern "C" fn pcreal_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |l| l.message.as_ptr()))
}

/// Byte offset of the last malformed-input error on this thread, or -1.
#[no_mangle]
pub extern "C" fn pcreal_last_error_offset() -> i64 {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(-1, |l| l.offset))
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcreal_model_load(path: *const c_char, out: *mut *mut PcrealModel) -> PcrealStatus {
    guard(|| {
        let path = path_arg(path)?;
        let ck = Checkpoint::load(&path).map_err(report)?;
        store(out, PcrealModel { inner: ck.model })
    })
}

/// Untrained model with the default architecture; every head starts at the
/// uniform distribution.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcreal_model_new(seed: u64, out: *mut *mut PcrealModel) -> PcrealStatus {
    guard(|| {
        let model = MetricModel::new(ModelConfig::default(), seed, Init::Symmetric).map_err(report)?;
        store(out, PcrealModel { inner: model })
    })
}

/// Write the model (without optimizer state) as a checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pcreal_model_save(model: *const PcrealModel, path: *const c_char) -> PcrealStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let path = path_arg(path)?;
        Checkpoint::new(model.inner.clone(), None)
            .save(path)
            .map_err(report)
    })
}

/// Number of trainable parameters, 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn pcreal_model_parameter_count(model: *const PcrealModel) -> u64 {
    model.as_ref().map_or(0, |m| m.inner.parameter_count() as u64)
}

/// # Safety
/// `model` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pcreal_model_free(model: *mut PcrealModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Cloud from `n` points stored as `x0 y0 z0 x1 …`.
///
/// # Safety
/// `xyz` must point to `3 * n` doubles (or be null with `n == 0`).
#[no_mangle]
pub unsafe extern "C" fn pcreal_cloud_from_xyz(
    xyz: *const f64,
    n: usize,
    out: *mut *mut PcrealCloud,
) -> PcrealStatus {
    guard(|| {
        let points = if n == 0 {
            Vec::new()
        } else {
            if xyz.is_null() {
                return Err(null("xyz"));
            }
            std::slice::from_raw_parts(xyz, 3 * n)
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect()
        };
        store(
            out,
            PcrealCloud {
                inner: PointCloud::new(points),
            },
        )
    })
}

/// Load a cloud: `.xyz`/`.txt` ASCII, `.bin` 4-column float32 (intensity
/// dropped), anything else 3-column float32.
///
/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcreal_cloud_load(path: *const c_char, out: *mut *mut PcrealCloud) -> PcrealStatus {
    guard(|| {
        let path = path_arg(path)?;
        let pc = PointCloud::load_auto(&path).map_err(report)?;
        store(out, PcrealCloud { inner: pc })
    })
}

/// Sample `index` of dataset `dataset` of the standard suite.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcreal_cloud_generate(
    dataset: u32,
    seed: u64,
    index: u64,
    out: *mut *mut PcrealCloud,
) -> PcrealStatus {
    guard(|| {
        let pc = DatasetSuite::default()
            .generate(dataset as usize, seed, index)
            .map_err(report)?;
        store(out, PcrealCloud { inner: pc })
    })
}

/// # Safety
/// `cloud` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn pcreal_cloud_len(cloud: *const PcrealCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.inner.len())
}

/// Copy up to `capacity` points (`3 * capacity` doubles) into `xyz`.
///
/// # Safety
/// `xyz` must have room for `3 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn pcreal_cloud_points(
    cloud: *const PcrealCloud,
    xyz: *mut f64,
    capacity: usize,
) -> PcrealStatus {
    guard(|| {
        let cloud = handle(cloud, "cloud")?;
        copy_rows(&cloud.inner.points, xyz, capacity)
    })
}

/// # Safety
/// `cloud` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pcreal_cloud_free(cloud: *mut PcrealCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

unsafe fn copy_rows<const N: usize>(
    rows: &[[f64; N]],
    out: *mut f64,
    capacity: usize,
) -> Result<(), PcrealStatus> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if capacity < rows.len() {
        return Err(set_error(
            PcrealStatus::BufferTooSmall,
            format!("buffer holds {capacity} rows, {} needed", rows.len()),
            -1,
        ));
    }
    let dst = std::slice::from_raw_parts_mut(out, N * rows.len());
    for (d, s) in dst.chunks_exact_mut(N).zip(rows) {
        d.copy_from_slice(s);
    }
    Ok(())
}

/// Score a cloud (dropout off).
///
/// # Safety
/// Handles must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcreal_score(
    model: *const PcrealModel,
    cloud: *const PcrealCloud,
    out: *mut *mut PcrealScores,
) -> PcrealStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let cloud = handle(cloud, "cloud")?;
        let scores = score_cloud(&model.inner, &cloud.inner).map_err(report)?;
        store(out, PcrealScores { inner: scores })
    })
}

/// Scene probabilities (Real, Synthetic, Misc) into `out[0..3]`.
///
/// # Safety
/// `out` must have room for 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn pcreal_scores_scene(scores: *const PcrealScores, out: *mut f64) -> PcrealStatus {
    guard(|| {
        let scores = handle(scores, "scores")?;
        copy_rows(&[scores.inner.scene], out, 1)
    })
}

/// # Safety
/// `scores` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn pcreal_scores_query_count(scores: *const PcrealScores) -> usize {
    scores.as_ref().map_or(0, |s| s.inner.queries.len())
}

/// Query coordinates, 3 doubles per query.
///
/// # Safety
/// `xyz` must have room for `3 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn pcreal_scores_queries(
    scores: *const PcrealScores,
    xyz: *mut f64,
    capacity: usize,
) -> PcrealStatus {
    guard(|| {
        let scores = handle(scores, "scores")?;
        copy_rows(&scores.inner.queries, xyz, capacity)
    })
}

/// Query probabilities, 3 doubles per query.
///
/// # Safety
/// `probs` must have room for `3 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn pcreal_scores_probs(
    scores: *const PcrealScores,
    probs: *mut f64,
    capacity: usize,
) -> PcrealStatus {
    guard(|| {
        let scores = handle(scores, "scores")?;
        copy_rows(&scores.inner.probs, probs, capacity)
    })
}

/// Scores as JSON. Release the string with [`pcreal_string_free`].
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcreal_scores_to_json(
    scores: *const PcrealScores,
    out: *mut *mut c_char,
) -> PcrealStatus {
    guard(|| {
        let scores = handle(scores, "scores")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let json = scores.inner.to_json().map_err(report)?;
        *out = CString::new(json).unwrap_or_default().into_raw();
        Ok(())
    })
}

/// Per-point probabilities of `cloud` interpolated from `scores`, 3 doubles
/// per point.
///
/// # Safety
/// `probs` must have room for `3 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn pcreal_anomaly_map(
    scores: *const PcrealScores,
    cloud: *const PcrealCloud,
    probs: *mut f64,
    capacity: usize,
) -> PcrealStatus {
    guard(|| {
        let scores = handle(scores, "scores")?;
        let cloud = handle(cloud, "cloud")?;
        let map = interpolate(&scores.inner, &cloud.inner.points).map_err(report)?;
        copy_rows(&map.probs, probs, capacity)
    })
}

/// # Safety
/// `scores` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pcreal_scores_free(scores: *mut PcrealScores) {
    if !scores.is_null() {
        drop(Box::from_raw(scores));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn pcreal_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
