//! C ABI over the `shape2animal` core.
//!
//! Every function returns an [`S2aStatus`]; on failure a description is
//! available from [`s2a_last_error_message`] on the same thread. Objects are
//! opaque handles owned by the caller and released with the matching `_free`
//! function. Strings returned through `char **` are released with
//! [`s2a_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use shape2animal::backends::Registry;
use shape2animal::concept::parse_concept_response;
use shape2animal::imaging::{self, BoundingBox, DepthMap, Mask, Raster};
use shape2animal::pipeline::{ImageInput, Pipeline, PipelineConfig};
use shape2animal::segmentation::select_best;
use shape2animal::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum S2aStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Shape = 3,
    Degenerate = 4,
    Config = 5,
    Numeric = 6,
    Precondition = 7,
    NoDetection = 8,
    EmptyMask = 9,
    IncoherentSegmentation = 10,
    Parse = 11,
    Backend = 12,
    Validation = 13,
    Io = 14,
    Panic = 15,
}

impl From<&Error> for S2aStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape { .. } => S2aStatus::Shape,
            Error::Degenerate(_) => S2aStatus::Degenerate,
            Error::Config(_) => S2aStatus::Config,
            Error::Numeric(_) => S2aStatus::Numeric,
            Error::Precondition(_) => S2aStatus::Precondition,
            Error::NoDetection => S2aStatus::NoDetection,
            Error::EmptyMask => S2aStatus::EmptyMask,
            Error::IncoherentSegmentation { .. } => S2aStatus::IncoherentSegmentation,
            Error::Parse { .. } => S2aStatus::Parse,
            Error::Backend(_) => S2aStatus::Backend,
            Error::Validation(_) => S2aStatus::Validation,
            Error::Io { .. } | Error::Image { .. } | Error::Json { .. } => S2aStatus::Io,
        }
    }
}

/// Axis-aligned box with exclusive upper corner.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct S2aBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub score: f32,
}

/// RGB image, channels interleaved, values in [0, 1].
pub struct S2aRaster {
    inner: Raster,
}

/// Single-channel mask, values in [0, 1].
pub struct S2aMask {
    inner: Mask,
}

/// Single-channel depth map normalized to [0, 1].
pub struct S2aDepthMap {
    inner: DepthMap,
}

pub struct S2aPipeline {
    inner: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

struct Failure(S2aStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(S2aStatus::from(&e), e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(S2aStatus::NullArgument, format!("`{name}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(S2aStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> S2aStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => S2aStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            S2aStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out_slot<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{name}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

fn c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| invalid("result contains a nul byte"))
}

unsafe fn copy_out(src: &[f32], dst: *mut f32, len: usize) -> Result<(), Failure> {
    if len != src.len() {
        return Err(invalid(format!("buffer holds {len} values, {} required", src.len())));
    }
    if dst.is_null() {
        return Err(null("buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn s2a_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn s2a_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn s2a_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// Rasters

/// Creates a raster from `width * height * 3` interleaved RGB values.
///
/// # Safety
/// `data` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn s2a_raster_new(
    width: u32,
    height: u32,
    data: *const f32,
    len: usize,
    out: *mut *mut S2aRaster,
) -> S2aStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let data = slice_arg(data, len, "data")?;
        let inner = Raster::new(width, height, data.to_vec())?;
        *out = boxed(S2aRaster { inner });
        Ok(())
    })
}

/// Decodes an image file (PNG or JPEG).
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn s2a_raster_load(path: *const c_char, out: *mut *mut S2aRaster) -> S2aStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let inner = Raster::load(str_arg(path, "path")?)?;
        *out = boxed(S2aRaster { inner });
        Ok(())
    })
}

/// # Safety
/// `raster` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn s2a_raster_save_png(raster: *const S2aRaster, path: *const c_char) -> S2aStatus {
    guard(|| {
        let r = borrow(raster, "raster")?;
        r.inner.save_png(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Width in pixels; 0 for a null handle.
///
/// # Safety
/// `raster` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn s2a_raster_width(raster: *const S2aRaster) -> u32 {
    raster.as_ref().map_or(0, |r| r.inner.width())
}

/// Height in pixels; 0 for a null handle.
///
/// # Safety
/// `raster` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn s2a_raster_height(raster: *const S2aRaster) -> u32 {
    raster.as_ref().map_or(0, |r| r.inner.height())
}

/// Copies the pixel values; `len` must equal `width * height * 3`.
///
/// # Safety
/// `raster` must be a live handle; `buffer` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn s2a_raster_copy_data(raster: *const S2aRaster, buffer: *mut f32, len: usize) -> S2aStatus {
    guard(|| copy_out(borrow(raster, "raster")?.inner.data(), buffer, len))
}

/// # Safety
/// `raster` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn s2a_raster_free(raster: *mut S2aRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

// ---------------------------------------------------------------------------
// Masks

/// Creates a mask from `width * height` values in [0, 1].
///
/// # Safety
/// `data` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn s2a_mask_new(
    width: u32,
    height: u32,
    data: *const f32,
    len: usize,
    out: *mut *mut S2aMask,
) -> S2aStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let data = slice_arg(data, len, "data")?;
        let inner = Mask::new(width, height, data.to_vec())?;
        *out = boxed(S2aMask { inner });
        Ok(())
    })
}

/// Loads a grayscale mask image.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn s2a_mask_load(path: *const c_char, out: *mut *mut S2aMask) -> S2aStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let inner = Mask::load(str_arg(path, "path")?)?;
        *out = boxed(S2aMask { inner });
        Ok(())
    })
}

/// # Safety
/// `mask` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn s2a_mask_save_png(mask: *const S2aMask, path: *const c_char) -> S2aStatus {
    guard(|| {
        borrow(mask, "mask")?.inner.save_png(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn s2a_mask_width(mask: *const S2aMask) -> u32 {
    mask.as_ref().map_or(0, |m| m.inner.width())
}

/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn s2a_mask_height(mask: *const S2aMask) -> u32 {
    mask.as_ref().map_or(0, |m| m.inner.height())
}

/// Copies the mask values; `len` must equal `width * height`.
///
/// # Safety
/// `mask` must be a live handle; `buffer` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn s2a_mask_copy_data(mask: *const S2aMask, buffer: *mut f32, len: usize) -> S2aStatus {
    guard(|| copy_out(borrow(mask, "mask")?.inner.data(), buffer, len))
}

/// Thresholds a mask: a pixel is foreground iff its value is at least
/// `threshold`, which must lie in (0, 1].
///
/// # Safety
/// `mask` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn s2a_mask_binarize(mask: *const S2aMask, threshold: f32, out: *mut *mut S2aMask) -> S2aStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let inner = imaging::binarize(&borrow(mask, "mask")?.inner, threshold)?;
        *out = boxed(S2aMask { inner });
        Ok(())
    })
}

/// # Safety
/// `mask` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn s2a_mask_free(mask: *mut S2aMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

// ---------------------------------------------------------------------------
// Depth maps

/// Maps raw depth values affinely onto [0, 1]; a constant input becomes 0.5.
///
/// # Safety
/// `raw` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn s2a_depth_normalize(
    raw: *const f32,
    len: usize,
    width: u32,
    height: u32,
    out: *mut *mut S2aDepthMap,
) -> S2aStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let inner = imaging::normalize_depth(slice_arg(raw, len, "raw")?, width, height)?;
        *out = boxed(S2aDepthMap { inner });
        Ok(())
    })
}

/// # Safety
/// `depth` must be a live handle; `buffer` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn s2a_depth_copy_data(depth: *const S2aDepthMap, buffer: *mut f32, len: usize) -> S2aStatus {
    guard(|| copy_out(borrow(depth, "depth")?.inner.data(), buffer, len))
}

/// # Safety
/// `depth` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn s2a_depth_save_png(depth: *const S2aDepthMap, path: *const c_char) -> S2aStatus {
    guard(|| {
        borrow(depth, "depth")?.inner.save_png(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `depth` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn s2a_depth_free(depth: *mut S2aDepthMap) {
    if !depth.is_null() {
        drop(Box::from_raw(depth));
    }
}

// ---------------------------------------------------------------------------
// Operations

/// `opacity * mask * gen + (1 - opacity) * mask * orig + (1 - mask) * orig`.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn s2a_blend_composite(
    gen: *const S2aRaster,
    orig: *const S2aRaster,
    mask: *const S2aMask,
    opacity: f64,
    out: *mut *mut S2aRaster,
) -> S2aStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let inner = imaging::blend_composite(
            &borrow(gen, "gen")?.inner,
            &borrow(orig, "orig")?.inner,
            &borrow(mask, "mask")?.inner,
            opacity,
        )?;
        *out = boxed(S2aRaster { inner });
        Ok(())
    })
}

/// Intersection over union of two binary masks of equal size.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn s2a_iou(a: *const S2aMask, b: *const S2aMask, out: *mut f64) -> S2aStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = imaging::iou(&borrow(a, "a")?.inner, &borrow(b, "b")?.inner)?;
        Ok(())
    })
}

/// Bilinear resize to a `side x side` square.
///
/// # Safety
/// `image` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn s2a_resize_to_working(image: *const S2aRaster, side: u32, out: *mut *mut S2aRaster) -> S2aStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let inner = imaging::resize_to_working(&borrow(image, "image")?.inner, side)?;
        *out = boxed(S2aRaster { inner });
        Ok(())
    })
}

/// Index of the best detection: highest score, then largest area, then
/// top-left-most corner.
///
/// # Safety
/// `boxes` must point to `count` readable boxes; `out_index` must be writable.
#[no_mangle]
pub unsafe extern "C" fn s2a_select_best(boxes: *const S2aBox, count: usize, out_index: *mut usize) -> S2aStatus {
    guard(|| {
        let out = out_slot(out_index, "out_index")?;
        let boxes = slice_arg(boxes, count, "boxes")?;
        let converted: Vec<BoundingBox> = boxes
            .iter()
            .map(|b| BoundingBox::new(b.x0, b.y0, b.x1, b.y1, b.score, ""))
            .collect();
        let best = select_best(&converted)?;
        *out = converted
            .iter()
            .position(|b| *b == best)
            .expect("selected box comes from the input");
        Ok(())
    })
}

/// Parses an interpreter reply into a label and a rendering prompt.
///
/// # Safety
/// `raw` must be a nul-terminated string; both outputs must be writable.
/// Returned strings are released with `s2a_string_free`.
#[no_mangle]
pub unsafe extern "C" fn s2a_parse_concept(
    raw: *const c_char,
    label_out: *mut *mut c_char,
    prompt_out: *mut *mut c_char,
) -> S2aStatus {
    guard(|| {
        let label_out = out_slot(label_out, "label_out")?;
        let prompt_out = out_slot(prompt_out, "prompt_out")?;
        let concept = parse_concept_response(str_arg(raw, "raw")?)?;
        let label = c_string(concept.label)?;
        match c_string(concept.render_prompt) {
            Ok(prompt) => {
                *label_out = label;
                *prompt_out = prompt;
                Ok(())
            }
            Err(e) => {
                drop(CString::from_raw(label));
                Err(e)
            }
        }
    })
}

// ---------------------------------------------------------------------------
// Pipeline

/// Builds a pipeline from TOML configuration text (null for defaults),
/// resolving backends from the built-in registry.
///
/// # Safety
/// `config_toml` must be null or a nul-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s2a_pipeline_new(config_toml: *const c_char, out: *mut *mut S2aPipeline) -> S2aStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let config = if config_toml.is_null() {
            PipelineConfig::default()
        } else {
            PipelineConfig::from_toml(str_arg(config_toml, "config_toml")?)?
        };
        let inner = Pipeline::from_registry(config, &Registry::with_defaults())?;
        *out = boxed(S2aPipeline { inner });
        Ok(())
    })
}

/// The pipeline's run seed.
///
/// # Safety
/// `pipeline` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn s2a_pipeline_seed(pipeline: *const S2aPipeline) -> u64 {
    pipeline.as_ref().map_or(0, |p| p.inner.run_seed())
}

/// Runs every stage for the image at `image_path` and returns the run record
/// as JSON. Stage failures are reported inside the record, not as a status.
///
/// # Safety
/// `pipeline` must be a live handle; `image_path` a nul-terminated string;
/// `record_json_out` writable.
#[no_mangle]
pub unsafe extern "C" fn s2a_pipeline_run(
    pipeline: *const S2aPipeline,
    image_path: *const c_char,
    force: bool,
    record_json_out: *mut *mut c_char,
) -> S2aStatus {
    guard(|| {
        let out = out_slot(record_json_out, "record_json_out")?;
        let p = borrow(pipeline, "pipeline")?;
        let input = ImageInput::load(str_arg(image_path, "image_path")?, None)?;
        let record = p.inner.run_single(&input, force)?;
        *out = c_string(serde_json::to_string(&record).expect("record serializes"))?;
        Ok(())
    })
}

/// # Safety
/// `pipeline` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn s2a_pipeline_free(pipeline: *mut S2aPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}
