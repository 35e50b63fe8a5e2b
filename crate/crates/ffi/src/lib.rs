//! C ABI over `marseg`.
//!
//! Every function returns a [`MarsegStatus`]. On failure, a description is kept per thread
//! and can be read with [`marseg_last_error`]. Labels use the default synthetic taxonomy.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use marseg::align::Pose;
use marseg::bev::{pillarize, BevConfig, BEV_CHANNELS};
use marseg::dataset::generate_dataset;
use marseg::label::{compose_label, decompose_label, ClassTaxonomy, Point, PointCloud};
use marseg::mars::{load_model, MarsModel, PreparedSample};
use marseg::synth::SceneParams;
use marseg::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarsegStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// An argument was out of range or inconsistent with the others.
    InvalidArgument = 2,
    /// Input data was malformed, missing or mismatched.
    DataError = 3,
    /// Output buffer length does not match the required length.
    BufferSize = 4,
    RuntimeError = 5,
    /// A panic was caught at the boundary.
    Panic = 6,
}

/// Opaque model handle.
pub struct MarsegModel {
    model: MarsModel,
    taxonomy: ClassTaxonomy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(MarsegStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) | Error::Arity { .. } | Error::Shape(_) => MarsegStatus::InvalidArgument,
            _ if e.is_data_error() => MarsegStatus::DataError,
            _ => MarsegStatus::RuntimeError,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(MarsegStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MarsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MarsegStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside marseg".into());
            MarsegStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(MarsegStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    non_null(p, what)?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn points_from(xyzi: &[f64]) -> Vec<Point> {
    xyzi.chunks_exact(4).map(|c| Point::new(c[0], c[1], c[2], c[3])).collect()
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next marseg call on the same thread.
#[no_mangle]
pub extern "C" fn marseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Composite code `semantic + C * moving`.
///
/// # Safety
/// `out` must point to writable storage for one `uint16_t`.
#[no_mangle]
pub unsafe extern "C" fn marseg_compose_label(semantic: u16, moving: bool, out: *mut u16) -> MarsegStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = compose_label(semantic, moving, &ClassTaxonomy::default_synthetic())?;
        Ok(())
    })
}

/// # Safety
/// `semantic` and `moving` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn marseg_decompose_label(code: u16, semantic: *mut u16, moving: *mut bool) -> MarsegStatus {
    guard(|| {
        non_null(semantic, "semantic")?;
        non_null(moving, "moving")?;
        let l = decompose_label(code, &ClassTaxonomy::default_synthetic())?;
        *semantic = l.semantic_id;
        *moving = l.moving;
        Ok(())
    })
}

/// Pillarizes `n` points (`xyzi`, 4 doubles each) onto a centered `height` x `width` grid
/// of `cell`-meter pillars. Writes `3 * height * width` doubles, channel-major.
///
/// # Safety
/// `xyzi` must hold `4 * n` doubles and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn marseg_pillarize(
    xyzi: *const f64,
    n: usize,
    height: usize,
    width: usize,
    cell: f64,
    out: *mut f64,
    out_len: usize,
) -> MarsegStatus {
    guard(|| {
        let cfg = BevConfig::centered(height, width, cell)?;
        let need = BEV_CHANNELS * cfg.num_pixels();
        if out_len != need {
            return Err(Fail(MarsegStatus::BufferSize, format!("out_len {out_len}, need {need}")));
        }
        let cloud = PointCloud::new(points_from(slice(xyzi, 4 * n, "xyzi")?), 0);
        if let Some(bad) = cloud.points.iter().position(|p| !p.is_valid()) {
            return Err(Fail(MarsegStatus::DataError, format!("point {bad} is not finite")));
        }
        slice_mut(out, out_len, "out")?.copy_from_slice(&pillarize(&cloud, &cfg).data);
        Ok(())
    })
}

/// Writes a synthetic dataset of `scenes` sequences with `frames` frames and
/// `points_per_frame` points each, over a square scene of half-width `extent` meters.
///
/// # Safety
/// `root` must be a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn marseg_generate_dataset(
    root: *const c_char,
    seed: u64,
    scenes: usize,
    frames: usize,
    points_per_frame: usize,
    extent: f64,
) -> MarsegStatus {
    guard(|| {
        let root = path(root, "root")?;
        let params = SceneParams {
            frames,
            extent,
            points_per_frame,
            ..SceneParams::default()
        };
        generate_dataset(&root, &params, scenes, seed)?;
        Ok(())
    })
}

/// Loads a checkpoint and its manifest. Free the handle with [`marseg_model_free`].
///
/// # Safety
/// `checkpoint` must be a nul-terminated path and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn marseg_model_load(checkpoint: *const c_char, out: *mut *mut MarsegModel) -> MarsegStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let taxonomy = ClassTaxonomy::default_synthetic();
        let model = load_model(&path(checkpoint, "checkpoint")?, &taxonomy)?;
        *out = Box::into_raw(Box::new(MarsegModel { model, taxonomy }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`marseg_model_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn marseg_model_free(model: *mut MarsegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Frames per sample the model expects.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn marseg_model_frames(model: *const MarsegModel, out: *mut usize) -> MarsegStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).model.config.frames;
        Ok(())
    })
}

/// Predicts composite codes for the last frame of a `k`-frame window.
///
/// `xyzi` holds every frame's points back to back, 4 doubles per point, with `counts[i]`
/// points in frame `i`. `poses` holds `k` sensor-to-world poses as row-major 3x4 `[R | t]`.
/// `out` receives one code per point of the last frame; `out_len` must equal `counts[k - 1]`.
///
/// # Safety
/// All pointers must be valid for the lengths described above.
#[no_mangle]
pub unsafe extern "C" fn marseg_model_predict(
    model: *const MarsegModel,
    xyzi: *const f64,
    counts: *const usize,
    poses: *const f64,
    k: usize,
    out: *mut u16,
    out_len: usize,
) -> MarsegStatus {
    guard(|| {
        non_null(model, "model")?;
        let m = &*model;
        let cfg = &m.model.config;
        if k != cfg.frames {
            return Err(invalid(format!("model expects {} frames, got {k}", cfg.frames)));
        }
        let counts = slice(counts, k, "counts")?;
        let total: usize = counts.iter().sum();
        let data = slice(xyzi, 4 * total, "xyzi")?;
        let pose_data = slice(poses, 12 * k, "poses")?;
        let mut frames = Vec::with_capacity(k);
        let mut offset = 0;
        for (i, &c) in counts.iter().enumerate() {
            frames.push(PointCloud::new(points_from(&data[4 * offset..4 * (offset + c)]), i as u32));
            offset += c;
        }
        let poses = pose_data
            .chunks_exact(12)
            .map(|c| Pose::from_row_major(c.try_into().expect("chunk of 12")))
            .collect::<marseg::Result<Vec<_>>>()?;
        let need = counts[k - 1];
        if out_len != need {
            return Err(Fail(MarsegStatus::BufferSize, format!("out_len {out_len}, need {need}")));
        }
        let s = PreparedSample::new(&frames, &poses, &cfg.bev, cfg.voxel, cfg.descriptor_scale(), &m.taxonomy)?;
        let codes = m.model.infer(&s, &m.taxonomy)?;
        slice_mut(out, out_len, "out")?.copy_from_slice(&codes);
        Ok(())
    })
}
