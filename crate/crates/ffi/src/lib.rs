//! C ABI over `pointseq`.
//!
//! Clouds and models are opaque handles owned by the caller and released
//! with the matching `*_free`. Every fallible call returns a `PsStatus`; on
//! failure `ps_last_error` describes what went wrong on the calling thread.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use pointseq::data::load_xyz;
use pointseq::geometry::{farthest_point_sampling, normalize, Point3, PointCloud, StartRule};
use pointseq::nn::{checkpoint, prepare, Model};
use pointseq::serialize::{CandidateRule, OrderingKind, ProximityThreshold};
use pointseq::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    EmptyInput = 3,
    NonFinite = 4,
    ShapeMismatch = 5,
    Io = 6,
    Parse = 7,
    Numerical = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsOrdering {
    Nimba = 0,
    AxisTriple = 1,
    Ysort = 2,
    Identity = 3,
}

impl From<PsOrdering> for OrderingKind {
    fn from(o: PsOrdering) -> Self {
        match o {
            PsOrdering::Nimba => OrderingKind::Nimba,
            PsOrdering::AxisTriple => OrderingKind::AxisTriple,
            PsOrdering::Ysort => OrderingKind::Ysort,
            PsOrdering::Identity => OrderingKind::Identity,
        }
    }
}

/// A point cloud.
pub struct PsCloud(PointCloud);

/// A trained classifier.
pub struct PsModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PsStatus {
    match e {
        Error::EmptyInput => PsStatus::EmptyInput,
        Error::NonFinite(_) => PsStatus::NonFinite,
        Error::ShapeMismatch(_) => PsStatus::ShapeMismatch,
        Error::Io { .. } => PsStatus::Io,
        Error::Parse { .. } | Error::Checkpoint(_) => PsStatus::Parse,
        Error::NumericalOverflow { .. } | Error::Diverged { .. } => PsStatus::Numerical,
        _ => PsStatus::InvalidArgument,
    }
}

struct Fail(PsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure and converts panics into `PsStatus::Panic`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PsStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path).to_str().map_err(|_| Fail(PsStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn put<T>(out: *mut *mut T, value: T) {
    // SAFETY: callers check `out` for null before building `value`.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `ps_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a cloud from `n_points` interleaved `x, y, z` doubles.
///
/// # Safety
/// `xyz` must point to `3 * n_points` readable doubles and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ps_cloud_new(xyz: *const f64, n_points: usize, out: *mut *mut PsCloud) -> PsStatus {
    guard(|| {
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len =
            n_points.checked_mul(3).ok_or_else(|| Fail(PsStatus::InvalidArgument, "n_points overflows".into()))?;
        let data = slice::from_raw_parts(xyz, len);
        let pts = data.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
        put(out, PsCloud(PointCloud::new(pts)?));
        Ok(())
    })
}

/// Reads a whitespace-separated `.xyz` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_cloud_load_xyz(path: *const c_char, out: *mut *mut PsCloud) -> PsStatus {
    guard(|| {
        let path = path_arg(path)?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, PsCloud(load_xyz(path)?));
        Ok(())
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_cloud_len(cloud: *const PsCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the points as interleaved doubles into `out` (capacity in doubles).
///
/// # Safety
/// `cloud` must be a live handle and `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_cloud_points(cloud: *const PsCloud, out: *mut f64, capacity: usize) -> PsStatus {
    guard(|| {
        let cloud = cloud.as_ref().ok_or_else(|| null("cloud"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let need = cloud.0.len() * 3;
        if capacity < need {
            return Err(Fail(PsStatus::BufferTooSmall, format!("need {need} doubles, have {capacity}")));
        }
        let dst = slice::from_raw_parts_mut(out, need);
        for (d, p) in dst.chunks_exact_mut(3).zip(cloud.0.points()) {
            d.copy_from_slice(&p.to_array());
        }
        Ok(())
    })
}

/// Centers the cloud on its centroid and scales it into the unit sphere,
/// in place.
///
/// # Safety
/// `cloud` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_cloud_normalize(cloud: *mut PsCloud) -> PsStatus {
    guard(|| {
        let cloud = cloud.as_mut().ok_or_else(|| null("cloud"))?;
        cloud.0 = normalize(&cloud.0)?;
        Ok(())
    })
}

/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_cloud_free(cloud: *mut PsCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Farthest-point sampling from point 0; writes `n_c` point indices.
///
/// # Safety
/// `cloud` must be a live handle and `out_indices` must hold `n_c` values.
#[no_mangle]
pub unsafe extern "C" fn ps_fps(cloud: *const PsCloud, n_c: usize, out_indices: *mut usize) -> PsStatus {
    guard(|| {
        let cloud = cloud.as_ref().ok_or_else(|| null("cloud"))?;
        if out_indices.is_null() {
            return Err(null("out_indices"));
        }
        let (_, idx) = farthest_point_sampling(&cloud.0, n_c, StartRule::Index(0))?;
        slice::from_raw_parts_mut(out_indices, n_c).copy_from_slice(&idx);
        Ok(())
    })
}

/// Sequence length `ordering` produces for `n_c` centers.
#[no_mangle]
pub extern "C" fn ps_ordering_len(ordering: PsOrdering, n_c: usize) -> usize {
    OrderingKind::from(ordering).replication() * n_c
}

/// Serializes `n_c` centers (interleaved doubles). Writes
/// `ps_ordering_len(ordering, n_c)` positions into `out_order`; `r` is the
/// proximity threshold and only matters for `Nimba`.
///
/// # Safety
/// `centers` must hold `3 * n_c` doubles and `out_order` must hold
/// `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ps_reorder(
    centers: *const f64,
    n_c: usize,
    ordering: PsOrdering,
    r: f64,
    out_order: *mut usize,
    capacity: usize,
) -> PsStatus {
    guard(|| {
        if centers.is_null() {
            return Err(null("centers"));
        }
        if out_order.is_null() {
            return Err(null("out_order"));
        }
        let need = ps_ordering_len(ordering, n_c);
        if capacity < need {
            return Err(Fail(PsStatus::BufferTooSmall, format!("need {need} slots, have {capacity}")));
        }
        let pts: Vec<Point3> =
            slice::from_raw_parts(centers, n_c * 3).chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
        if pts.iter().any(|p| !p.is_finite()) {
            return Err(Fail(PsStatus::NonFinite, "centers contain NaN or infinity".into()));
        }
        let s = OrderingKind::from(ordering).serialize(&pts, ProximityThreshold::new(r)?, CandidateRule::First)?;
        slice::from_raw_parts_mut(out_order, need).copy_from_slice(&s.order);
        Ok(())
    })
}

/// Loads a checkpoint written by `pointseq train --checkpoint-out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_model_load(path: *const c_char, out: *mut *mut PsModel) -> PsStatus {
    guard(|| {
        let path = path_arg(path)?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, PsModel(checkpoint::load(path)?));
        Ok(())
    })
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_model_num_classes(model: *const PsModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.classes)
}

/// Number of points a cloud needs before classification (clouds are used
/// as given, so pass one sampled to this size). 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_model_num_points(model: *const PsModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.n_points)
}

/// Classifies one cloud. Writes the predicted label and, when `out_logits`
/// is non-null, `num_classes` logits.
///
/// # Safety
/// Handles must be live; `out_label` must be writable; `out_logits` must be
/// null or hold `logits_capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_model_classify(
    model: *const PsModel,
    cloud: *const PsCloud,
    out_label: *mut usize,
    out_logits: *mut f64,
    logits_capacity: usize,
) -> PsStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let cloud = &cloud.as_ref().ok_or_else(|| null("cloud"))?.0;
        if out_label.is_null() {
            return Err(null("out_label"));
        }
        let classes = model.config.classes;
        if !out_logits.is_null() && logits_capacity < classes {
            return Err(Fail(PsStatus::BufferTooSmall, format!("need {classes} logits, have {logits_capacity}")));
        }
        let sample = prepare(cloud, &model.config, 0, 0)?;
        let logits = model.logits(&[&sample])?;
        let row = logits.row(0);
        let label = (0..classes).fold(0, |best, c| if row[c] > row[best] { c } else { best });
        *out_label = label;
        if !out_logits.is_null() {
            slice::from_raw_parts_mut(out_logits, classes).copy_from_slice(&row.to_vec());
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_model_free(model: *mut PsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
