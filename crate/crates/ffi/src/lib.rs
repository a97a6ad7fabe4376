//! C ABI over the `hfnerf` library.
//!
//! Objects cross the boundary as opaque handles created by `*_load` / `*_new`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`HfStatus`]; on failure [`hf_last_error_message`] describes
//! the most recent error on the calling thread. Output pointers are written
//! only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hfnerf::autodiff::load_checkpoint;
use hfnerf::config::RunConfig;
use hfnerf::dataset::{load_dataset, Dataset, HeatmapStack};
use hfnerf::evaluation::{evaluate, render_view};
use hfnerf::field::FieldParams;
use hfnerf::image::RgbImage;
use hfnerf::metrics;
use hfnerf::rendering::RenderOutput;
use hfnerf::skeleton::{extract_skeleton, SkeletonParams};
use hfnerf::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Dataset = 5,
    Config = 6,
    ShapeMismatch = 7,
    Numeric = 8,
    Panic = 9,
}

/// A trained field plus the run configuration it was trained with.
pub struct HfModel {
    params: FieldParams,
    config: RunConfig,
}

/// A loaded dataset.
pub struct HfDataset {
    inner: Dataset,
}

/// One rendered view: RGB, heatmaps and opacity.
pub struct HfRender {
    inner: RenderOutput,
}

/// A stack of per-joint heatmaps.
pub struct HfHeatmaps {
    inner: HeatmapStack,
}

/// One extracted joint. `present` is 0 or 1; absent joints have zero
/// coordinates and confidence.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HfJoint {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
    pub present: u8,
}

/// Mean test-view metrics. `psnr` is `+inf` when every image is exact.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HfMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub mse_color: f64,
    pub mse_heat: f64,
    pub pck: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(HfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::ShapeMismatch { .. } => HfStatus::ShapeMismatch,
            Error::InvalidArgument(_) | Error::Backward(_) => HfStatus::InvalidArgument,
            Error::Io { .. } => HfStatus::Io,
            Error::Format { .. } => HfStatus::Format,
            Error::Dataset(_) => HfStatus::Dataset,
            Error::Config(_) => HfStatus::Config,
            Error::NonFiniteLoss { .. } => HfStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: HfStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            HfStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(HfStatus::NullPointer, format!("{what} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(HfStatus::InvalidArgument, format!("{what} is not valid UTF-8")),
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .map_or_else(|| fail(HfStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .map_or_else(|| fail(HfStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(HfStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), Failure> {
    if len != src.len() {
        return fail(
            HfStatus::ShapeMismatch,
            format!("destination holds {len} values, need {}", src.len()),
        );
    }
    if len > 0 {
        if dst.is_null() {
            return fail(HfStatus::NullPointer, "destination is null");
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    }
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. `config_path` may be null, in which case
/// `config.txt` beside the checkpoint is used if present, else defaults.
///
/// # Safety
/// Paths must be NUL-terminated strings or null; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_model_load(
    ckpt_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut HfModel,
) -> HfStatus {
    guard(|| {
        let ckpt = path_arg(ckpt_path, "ckpt_path")?;
        let out = out_ptr(out, "out")?;
        let cfg_path = if config_path.is_null() {
            ckpt.parent()
                .map(|d| d.join("config.txt"))
                .filter(|p| p.is_file())
        } else {
            Some(path_arg(config_path, "config_path")?)
        };
        let config = match cfg_path {
            Some(p) => RunConfig::load(&p)?,
            None => RunConfig::default(),
        };
        let params = FieldParams::from_named(&config.field, load_checkpoint(&ckpt)?)?;
        *out = boxed(HfModel { params, config });
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`hf_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn hf_model_free(model: *mut HfModel) {
    release(model);
}

/// Number of joint channels the model renders.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_model_joints(model: *const HfModel, out: *mut usize) -> HfStatus {
    guard(|| {
        let m = handle(model, "model")?;
        *out_ptr(out, "out")? = m.params.config.joints;
        Ok(())
    })
}

/// Loads a dataset from its directory or manifest path.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_dataset_load(path: *const c_char, out: *mut *mut HfDataset) -> HfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        *out = boxed(HfDataset {
            inner: load_dataset(&path)?,
        });
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from [`hf_dataset_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn hf_dataset_free(dataset: *mut HfDataset) {
    release(dataset);
}

/// View count and image size of a dataset.
///
/// # Safety
/// `dataset` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_dataset_info(
    dataset: *const HfDataset,
    views: *mut usize,
    width: *mut usize,
    height: *mut usize,
) -> HfStatus {
    guard(|| {
        let d = &handle(dataset, "dataset")?.inner;
        let (views, width, height) = (out_ptr(views, "views")?, out_ptr(width, "width")?, out_ptr(height, "height")?);
        *views = d.views.len();
        *width = d.manifest.width;
        *height = d.manifest.height;
        Ok(())
    })
}

/// Renders dataset view `view` (its manifest index). `n_samples` of 0 uses
/// the model's configured evaluation sample count.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_render_view(
    model: *const HfModel,
    dataset: *const HfDataset,
    view: usize,
    n_samples: usize,
    out: *mut *mut HfRender,
) -> HfStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let d = &handle(dataset, "dataset")?.inner;
        let out = out_ptr(out, "out")?;
        let n = if n_samples == 0 { m.config.eval_samples } else { n_samples };
        *out = boxed(HfRender {
            inner: render_view(&m.params, d, view, n)?,
        });
        Ok(())
    })
}

/// # Safety
/// `render` must come from [`hf_render_view`] or be null.
#[no_mangle]
pub unsafe extern "C" fn hf_render_free(render: *mut HfRender) {
    release(render);
}

/// Width, height and joint count of a render.
///
/// # Safety
/// `render` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_render_dims(
    render: *const HfRender,
    width: *mut usize,
    height: *mut usize,
    joints: *mut usize,
) -> HfStatus {
    guard(|| {
        let r = &handle(render, "render")?.inner;
        let (width, height, joints) = (out_ptr(width, "width")?, out_ptr(height, "height")?, out_ptr(joints, "joints")?);
        *width = r.image.width;
        *height = r.image.height;
        *joints = r.heatmaps.joints;
        Ok(())
    })
}

/// Copies the interleaved row-major RGB image; `len` must be `w·h·3`.
///
/// # Safety
/// `dst` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hf_render_copy_rgb(render: *const HfRender, dst: *mut f64, len: usize) -> HfStatus {
    guard(|| copy_out(&handle(render, "render")?.inner.image.data, dst, len))
}

/// Copies the opacity map; `len` must be `w·h`.
///
/// # Safety
/// `dst` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hf_render_copy_opacity(render: *const HfRender, dst: *mut f64, len: usize) -> HfStatus {
    guard(|| copy_out(&handle(render, "render")?.inner.opacity, dst, len))
}

/// Copies the rendered heatmaps out as a new heatmap handle.
///
/// # Safety
/// `render` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_render_heatmaps(render: *const HfRender, out: *mut *mut HfHeatmaps) -> HfStatus {
    guard(|| {
        let r = &handle(render, "render")?.inner;
        *out_ptr(out, "out")? = boxed(HfHeatmaps {
            inner: r.heatmaps.clone(),
        });
        Ok(())
    })
}

/// Builds a heatmap stack from `k·h·w` values laid out `[k][v][u]`.
///
/// # Safety
/// `values` must hold `joints·width·height` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_heatmaps_new(
    joints: usize,
    width: usize,
    height: usize,
    values: *const f64,
    out: *mut *mut HfHeatmaps,
) -> HfStatus {
    guard(|| {
        let n = joints
            .checked_mul(width)
            .and_then(|x| x.checked_mul(height))
            .ok_or_else(|| Failure(HfStatus::InvalidArgument, "size overflow".into()))?;
        let vals = in_slice(values, n, "values")?.to_vec();
        let out = out_ptr(out, "out")?;
        *out = boxed(HfHeatmaps {
            inner: HeatmapStack::new(joints, width, height, vals)?,
        });
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_heatmaps_load(path: *const c_char, out: *mut *mut HfHeatmaps) -> HfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        *out = boxed(HfHeatmaps {
            inner: HeatmapStack::load(&path)?,
        });
        Ok(())
    })
}

/// # Safety
/// `heatmaps` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hf_heatmaps_save(heatmaps: *const HfHeatmaps, path: *const c_char) -> HfStatus {
    guard(|| {
        let h = &handle(heatmaps, "heatmaps")?.inner;
        h.save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `heatmaps` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hf_heatmaps_free(heatmaps: *mut HfHeatmaps) {
    release(heatmaps);
}

/// Joint count, width and height of a heatmap stack.
///
/// # Safety
/// `heatmaps` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_heatmaps_dims(
    heatmaps: *const HfHeatmaps,
    joints: *mut usize,
    width: *mut usize,
    height: *mut usize,
) -> HfStatus {
    guard(|| {
        let h = &handle(heatmaps, "heatmaps")?.inner;
        let (joints, width, height) = (out_ptr(joints, "joints")?, out_ptr(width, "width")?, out_ptr(height, "height")?);
        *joints = h.joints;
        *width = h.width;
        *height = h.height;
        Ok(())
    })
}

/// Extracts one joint per channel into `out[0..len]`; `len` must equal the
/// joint count.
///
/// # Safety
/// `heatmaps` must be a live handle; `out` must hold `len` joints.
#[no_mangle]
pub unsafe extern "C" fn hf_extract_skeleton(
    heatmaps: *const HfHeatmaps,
    sigma_g: f64,
    tau: f64,
    out: *mut HfJoint,
    len: usize,
) -> HfStatus {
    guard(|| {
        let h = &handle(heatmaps, "heatmaps")?.inner;
        let params = SkeletonParams { sigma_g, tau };
        params.validate()?;
        if len != h.joints {
            return fail(
                HfStatus::ShapeMismatch,
                format!("output holds {len} joints, stack has {}", h.joints),
            );
        }
        if out.is_null() && len > 0 {
            return fail(HfStatus::NullPointer, "out is null");
        }
        let skel = extract_skeleton(h, &[], &params)?;
        for (i, j) in skel.joints.iter().enumerate() {
            *out.add(i) = HfJoint {
                u: j.u,
                v: j.v,
                confidence: j.confidence,
                present: j.present as u8,
            };
        }
        Ok(())
    })
}

/// Mean metrics over the dataset's test views.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_evaluate(model: *const HfModel, dataset: *const HfDataset, out: *mut HfMetrics) -> HfStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let d = &handle(dataset, "dataset")?.inner;
        let out = out_ptr(out, "out")?;
        let r = evaluate(&m.params, d, &m.config)?;
        *out = HfMetrics {
            psnr: r.mean.psnr.0,
            ssim: r.mean.ssim,
            mse_color: r.mean.mse_color,
            mse_heat: r.mean.mse_heat,
            pck: r.mean.pck,
        };
        Ok(())
    })
}

/// Mean squared difference of two equal-length arrays.
///
/// # Safety
/// `a` and `b` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_mse(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> HfStatus {
    guard(|| {
        let v = metrics::mse(in_slice(a, len, "a")?, in_slice(b, len, "b")?)?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

unsafe fn rgb_arg(p: *const f64, width: usize, height: usize, what: &str) -> Result<RgbImage, Failure> {
    let n = width
        .checked_mul(height)
        .and_then(|x| x.checked_mul(3))
        .ok_or_else(|| Failure(HfStatus::InvalidArgument, "size overflow".into()))?;
    Ok(RgbImage {
        width,
        height,
        data: in_slice(p, n, what)?.to_vec(),
    })
}

/// PSNR in dB of two interleaved RGB images; `+inf` when identical.
///
/// # Safety
/// `a` and `b` must hold `width·height·3` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_psnr(
    a: *const f64,
    b: *const f64,
    width: usize,
    height: usize,
    peak: f64,
    out: *mut f64,
) -> HfStatus {
    guard(|| {
        let v = metrics::psnr(&rgb_arg(a, width, height, "a")?, &rgb_arg(b, width, height, "b")?, peak)?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

/// Windowed luma SSIM of two interleaved RGB images.
///
/// # Safety
/// `a` and `b` must hold `width·height·3` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_ssim(
    a: *const f64,
    b: *const f64,
    width: usize,
    height: usize,
    peak: f64,
    out: *mut f64,
) -> HfStatus {
    guard(|| {
        let v = metrics::ssim(&rgb_arg(a, width, height, "a")?, &rgb_arg(b, width, height, "b")?, peak)?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}
