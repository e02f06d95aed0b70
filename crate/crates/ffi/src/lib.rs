//! C ABI over `malimg-core`.
//!
//! Every fallible function returns a [`MalimgStatus`]. On failure the message
//! is available from [`malimg_last_error`] on the same thread. Objects are
//! opaque handles created by `*_new`/`*_load`/`malimg_convert` and released
//! with the matching `*_free`; passing NULL to a `*_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use malimg_core::binimg::{convert, write_png, BinImgError, ImageTensor, WidthRule};
use malimg_core::metrics::{confusion, macro_auc, macro_prf};
use malimg_core::nn::{softmax, Checkpoint, Model, NnError, Tensor};
use malimg_core::sfopt::{OptError, ScheduleFree, SfHyper};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalimgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    NonFinite = 6,
    Internal = 7,
}

/// A converted image (channels x height x width, values in [0, 1]).
pub struct MalimgImage {
    inner: ImageTensor,
}

/// A classifier loaded from a checkpoint.
pub struct MalimgModel {
    inner: Model,
}

/// Schedule-free AdamW state over a flat parameter vector.
pub struct MalimgScheduleFree {
    inner: ScheduleFree,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(MalimgStatus, String);

impl From<BinImgError> for Failure {
    fn from(e: BinImgError) -> Self {
        let status = match e {
            BinImgError::Io(_) => MalimgStatus::Io,
            BinImgError::ShapeMismatch(_) | BinImgError::InvalidDimensions(_) => MalimgStatus::Shape,
            BinImgError::EmptyInput | BinImgError::InvalidWidthRule(_) => MalimgStatus::InvalidArgument,
            _ => MalimgStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

impl From<NnError> for Failure {
    fn from(e: NnError) -> Self {
        let status = match e {
            NnError::Shape(_) => MalimgStatus::Shape,
            NnError::NonFinite(_) => MalimgStatus::NonFinite,
            NnError::Checkpoint(_) => MalimgStatus::Format,
            _ => MalimgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<OptError> for Failure {
    fn from(e: OptError) -> Self {
        let status = match e {
            OptError::NonFiniteGradient(_) | OptError::NonFiniteState(_) => MalimgStatus::NonFinite,
            OptError::LengthMismatch { .. } => MalimgStatus::Shape,
            OptError::InvalidHyper(_) => MalimgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<malimg_core::metrics::MetricsError> for Failure {
    fn from(e: malimg_core::metrics::MetricsError) -> Self {
        Failure(MalimgStatus::InvalidArgument, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MalimgStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(MalimgStatus::NullPointer, format!("`{what}` is NULL"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MalimgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MalimgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MalimgStatus::Internal
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { slice::from_raw_parts_mut(p, len) })
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn fill<T: Copy>(out: &mut [T], src: &[T]) -> Result<(), Failure> {
    if out.len() != src.len() {
        return Err(Failure(
            MalimgStatus::Shape,
            format!("output buffer holds {} values, need {}", out.len(), src.len()),
        ));
    }
    out.copy_from_slice(src);
    Ok(())
}

/// Message of the last failed call on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn malimg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn malimg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Converts `len` bytes to a `channels x size x size` image with the default
/// width table. `channels` is 1 (grayscale) or 3 (DEX section coloring).
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` to writable storage
/// for one pointer.
#[no_mangle]
pub unsafe extern "C" fn malimg_convert(
    bytes: *const u8,
    len: usize,
    channels: usize,
    size: usize,
    out: *mut *mut MalimgImage,
) -> MalimgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data = unsafe { input(bytes, len, "bytes")? };
        let inner = convert(data, channels, &WidthRule::default(), size)?;
        unsafe { *out = Box::into_raw(Box::new(MalimgImage { inner })) };
        Ok(())
    })
}

/// Writes the image's channel, height and width.
///
/// # Safety
/// `img` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn malimg_image_dims(
    img: *const MalimgImage,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> MalimgStatus {
    guard(|| {
        let img = unsafe { handle(img, "img")? };
        if channels.is_null() || height.is_null() || width.is_null() {
            return Err(null("dims"));
        }
        let (c, h, w) = img.inner.shape();
        unsafe {
            *channels = c;
            *height = h;
            *width = w;
        }
        Ok(())
    })
}

/// Copies the planar pixel values into `out`, which must hold exactly
/// `channels * height * width` doubles.
///
/// # Safety
/// `img` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn malimg_image_data(img: *const MalimgImage, out: *mut f64, len: usize) -> MalimgStatus {
    guard(|| {
        let img = unsafe { handle(img, "img")? };
        fill(unsafe { output(out, len, "out")? }, img.inner.data())
    })
}

/// Writes the image as an 8-bit PNG.
///
/// # Safety
/// `img` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn malimg_image_write_png(img: *const MalimgImage, path: *const c_char) -> MalimgStatus {
    guard(|| {
        let img = unsafe { handle(img, "img")? };
        write_png(&unsafe { path_arg(path)? }, &img.inner)?;
        Ok(())
    })
}

/// # Safety
/// `img` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn malimg_image_free(img: *mut MalimgImage) {
    if !img.is_null() {
        drop(unsafe { Box::from_raw(img) });
    }
}

/// Loads model parameters from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn malimg_model_load(path: *const c_char, out: *mut *mut MalimgModel) -> MalimgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = Checkpoint::load(&unsafe { path_arg(path)? })?;
        let inner = ckpt.to_model()?;
        unsafe { *out = Box::into_raw(Box::new(MalimgModel { inner })) };
        Ok(())
    })
}

/// Writes the model's class count and expected input channel count.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn malimg_model_info(
    model: *const MalimgModel,
    num_classes: *mut usize,
    in_channels: *mut usize,
) -> MalimgStatus {
    guard(|| {
        let model = unsafe { handle(model, "model")? };
        if num_classes.is_null() || in_channels.is_null() {
            return Err(null("info"));
        }
        let cfg = model.inner.config();
        unsafe {
            *num_classes = cfg.num_classes;
            *in_channels = cfg.backbone.in_channels;
        }
        Ok(())
    })
}

/// Class probabilities for a `(batch, channels, height, width)` input.
/// `probs` must hold exactly `batch * num_classes` doubles.
///
/// # Safety
/// `model` must be a live handle, `images` must point to
/// `batch * channels * height * width` doubles and `probs` to `probs_len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn malimg_model_predict(
    model: *const MalimgModel,
    images: *const f64,
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    probs: *mut f64,
    probs_len: usize,
) -> MalimgStatus {
    guard(|| {
        let model = unsafe { handle(model, "model")? };
        let n = batch * channels * height * width;
        let x = Tensor::new(
            &[batch, channels, height, width],
            unsafe { input(images, n, "images")? }.to_vec(),
        )?;
        let p = softmax(&model.inner.predict(&x)?)?;
        fill(unsafe { output(probs, probs_len, "probs")? }, p.data())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn malimg_model_free(model: *mut MalimgModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Starts schedule-free AdamW at `theta0` (length `n`).
///
/// # Safety
/// `theta0` must point to `n` doubles and `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn malimg_sf_new(
    lr: f64,
    weight_decay: f64,
    warmup_steps: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    theta0: *const f64,
    n: usize,
    out: *mut *mut MalimgScheduleFree,
) -> MalimgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let hyper = SfHyper {
            lr,
            weight_decay,
            warmup_steps,
            beta1,
            beta2,
            eps,
        };
        let inner = ScheduleFree::new(hyper, unsafe { input(theta0, n, "theta0")? })?;
        unsafe { *out = Box::into_raw(Box::new(MalimgScheduleFree { inner })) };
        Ok(())
    })
}

/// Writes the point where the next gradient should be evaluated.
///
/// # Safety
/// `opt` must be a live handle and `out` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn malimg_sf_eval_point(opt: *const MalimgScheduleFree, out: *mut f64, n: usize) -> MalimgStatus {
    guard(|| {
        let opt = unsafe { handle(opt, "opt")? };
        fill(unsafe { output(out, n, "out")? }, &opt.inner.eval_point())
    })
}

/// Applies one step with gradient `grad` taken at the evaluation point. The
/// state is unchanged on failure.
///
/// # Safety
/// `opt` must be a live handle not used concurrently and `grad` must point
/// to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn malimg_sf_step(opt: *mut MalimgScheduleFree, grad: *const f64, n: usize) -> MalimgStatus {
    guard(|| {
        let opt = unsafe { opt.as_mut() }.ok_or_else(|| null("opt"))?;
        opt.inner.step(unsafe { input(grad, n, "grad")? })?;
        Ok(())
    })
}

/// Writes the averaged parameters used for evaluation.
///
/// # Safety
/// `opt` must be a live handle and `out` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn malimg_sf_params(opt: *const MalimgScheduleFree, out: *mut f64, n: usize) -> MalimgStatus {
    guard(|| {
        let opt = unsafe { handle(opt, "opt")? };
        fill(unsafe { output(out, n, "out")? }, opt.inner.params())
    })
}

/// # Safety
/// `opt` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn malimg_sf_free(opt: *mut MalimgScheduleFree) {
    if !opt.is_null() {
        drop(unsafe { Box::from_raw(opt) });
    }
}

/// Macro precision, recall and F1 of `n` predictions over `classes` classes,
/// written to `out[0..3]`.
///
/// # Safety
/// `preds` and `truths` must point to `n` values; `out` to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn malimg_macro_prf(
    preds: *const u32,
    truths: *const u32,
    n: usize,
    classes: usize,
    out: *mut f64,
) -> MalimgStatus {
    guard(|| {
        let p: Vec<usize> = unsafe { input(preds, n, "preds")? }
            .iter()
            .map(|&v| v as usize)
            .collect();
        let t: Vec<usize> = unsafe { input(truths, n, "truths")? }
            .iter()
            .map(|&v| v as usize)
            .collect();
        let prf = macro_prf(&confusion(&p, &t, classes)?);
        fill(
            unsafe { output(out, 3, "out")? },
            &[prf.p_macro, prf.r_macro, prf.f1_macro],
        )
    })
}

/// One-vs-rest macro AUC from an `n x classes` row-major score matrix. Classes
/// without both positives and negatives are left out of the mean.
///
/// # Safety
/// `scores` must point to `n * classes` doubles, `truths` to `n` values and
/// `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn malimg_macro_auc(
    scores: *const f64,
    truths: *const u32,
    n: usize,
    classes: usize,
    out: *mut f64,
) -> MalimgStatus {
    guard(|| {
        let s = unsafe { input(scores, n * classes, "scores")? };
        let t: Vec<usize> = unsafe { input(truths, n, "truths")? }
            .iter()
            .map(|&v| v as usize)
            .collect();
        let auc = macro_auc(s, classes, &t)?;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { *out = auc.auc_macro };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_out_pointer_reports_status() {
        let status = unsafe { malimg_convert(b"abc".as_ptr(), 3, 1, 8, ptr::null_mut()) };
        assert_eq!(status, MalimgStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(malimg_last_error()) };
        assert!(msg.to_str().unwrap().contains("out"));
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(malimg_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
