//! C ABI over `ldct-core`.
//!
//! Every function returns an [`LdctStatus`]; on failure a description is
//! available from [`ldct_last_error_message`] on the same thread. Models are
//! opaque handles released with [`ldct_model_free`]. Image buffers are
//! row-major and owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ldct_core::error::Error;
use ldct_core::evalkit::{psnr, ssim, Psnr};
use ldct_core::network::{
    build_arch, count_weights, forward, init_glorot, receptive_field, ArchSpec, NetParams, Variant,
};
use ldct_core::physics::{simulate_low_dose, Calibration, CtImage, SimulationConfig, Unit};
use ldct_core::trainer::load_model;
use ldct_core::{Shape, Tensor};

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdctStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    NonFinite = 6,
    Panic = 7,
}

/// Trained or freshly initialized network.
pub struct LdctModel {
    arch: ArchSpec,
    params: NetParams<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LdctStatus {
    match e {
        Error::Shape { .. } => LdctStatus::ShapeMismatch,
        Error::InvalidArgument(_) | Error::Config(_) => LdctStatus::InvalidArgument,
        Error::NonFinite(_) => LdctStatus::NonFinite,
        Error::File { .. } | Error::Io(_) => LdctStatus::Io,
        _ => LdctStatus::Format,
    }
}

struct Fail(LdctStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LdctStatus::NullPointer, format!("{what} is null"))
}

fn bad(msg: impl Into<String>) -> Fail {
    Fail(LdctStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure, and converts panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LdctStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LdctStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            LdctStatus::Panic
        }
    }
}

fn variant(code: u32) -> Result<Variant, Fail> {
    Variant::from_code(code)
        .ok_or_else(|| bad(format!("unknown variant {code} (0 = drl, 1 = drl-e)")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn image_len(height: usize, width: usize) -> Result<usize, Fail> {
    if height == 0 || width == 0 {
        return Err(bad("image dimensions must be >= 1"));
    }
    height
        .checked_mul(width)
        .ok_or_else(|| bad("image dimensions overflow"))
}

/// Message of the last failure on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ldct_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ldct_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint or weights container.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ldct_model_load(
    path: *const c_char,
    out: *mut *mut LdctModel,
) -> LdctStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| bad("path is not UTF-8"))?;
        let (arch, params) = load_model(Path::new(p))?;
        *out = Box::into_raw(Box::new(LdctModel { arch, params }));
        Ok(())
    })
}

/// Freshly initialized network. `variant`: 0 = drl, 1 = drl-e.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ldct_model_new(
    variant_code: u32,
    n_filters: usize,
    seed: u64,
    out: *mut *mut LdctModel,
) -> LdctStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let arch = build_arch(variant(variant_code)?, n_filters)?;
        let params = init_glorot(&arch, seed)?;
        *out = Box::into_raw(Box::new(LdctModel { arch, params }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ldct_model_free(model: *mut LdctModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Receptive field of a model's architecture, in pixels.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ldct_model_receptive_field(
    model: *const LdctModel,
    out: *mut usize,
) -> LdctStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = receptive_field(&m.arch);
        Ok(())
    })
}

/// Denoises one `height x width` image with values normalized to `[0, 1]`
/// (stored pixel / 4095). `output` receives the same number of values.
/// Concurrent calls on one model are allowed.
///
/// # Safety
/// `input` and `output` must each hold `height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn ldct_model_denoise(
    model: *const LdctModel,
    input: *const f32,
    height: usize,
    width: usize,
    output: *mut f32,
) -> LdctStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let n = image_len(height, width)?;
        let x = slice(input, n, "input")?;
        let x = Tensor::new(Shape::new(1, 1, height, width), x.to_vec())?;
        let y = forward(&m.arch, &m.params, &x)?;
        slice_mut(output, n, "output")?.copy_from_slice(y.data());
        Ok(())
    })
}

/// Simulates a low-dose slice from stored pixels. `angles` projections,
/// `i0` incident photons per bin, attenuation of water `mu_water` (1/mm).
/// Writes stored pixels of the low-dose slice to `output`.
///
/// # Safety
/// `pixels` and `output` must each hold `height * width` doubles.
#[no_mangle]
pub unsafe extern "C" fn ldct_simulate_low_dose(
    pixels: *const f64,
    height: usize,
    width: usize,
    slope: f64,
    intercept: f64,
    voxel_mm: f64,
    i0: f64,
    seed: u64,
    angles: usize,
    mu_water: f64,
    output: *mut f64,
) -> LdctStatus {
    guard(|| {
        let n = image_len(height, width)?;
        let px = slice(pixels, n, "pixels")?;
        let cal = Calibration {
            slope,
            intercept,
            voxel: voxel_mm,
        };
        let img = CtImage::new(height, width, px.to_vec(), Unit::Pixel, cal)?;
        let cfg = SimulationConfig {
            i0,
            seed,
            angles,
            mu_water,
            ..SimulationConfig::default()
        };
        let out = simulate_low_dose(&img, &cfg)?;
        slice_mut(output, n, "output")?.copy_from_slice(out.image.data());
        Ok(())
    })
}

/// PSNR in dB of two equal-length buffers. For identical inputs `out` is
/// +infinity and `identical` is set to 1.
///
/// # Safety
/// `a` and `b` must hold `len` doubles; `out` and `identical` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ldct_psnr(
    a: *const f64,
    b: *const f64,
    len: usize,
    peak: f64,
    out: *mut f64,
    identical: *mut bool,
) -> LdctStatus {
    guard(|| {
        if len == 0 {
            return Err(bad("empty buffers"));
        }
        let shape = Shape::new(1, 1, 1, len);
        let ta = Tensor::new(shape, slice(a, len, "a")?.to_vec())?;
        let tb = Tensor::new(shape, slice(b, len, "b")?.to_vec())?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        let id = identical.as_mut().ok_or_else(|| null("identical"))?;
        match psnr(&ta, &tb, peak)? {
            Psnr::Identical => {
                *o = f64::INFINITY;
                *id = true;
            }
            Psnr::Db(v) => {
                *o = v;
                *id = false;
            }
        }
        Ok(())
    })
}

/// Mean SSIM of two `height x width` images with dynamic range 1.
///
/// # Safety
/// `a` and `b` must hold `height * width` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ldct_ssim(
    a: *const f64,
    b: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
) -> LdctStatus {
    guard(|| {
        let n = image_len(height, width)?;
        let shape = Shape::new(1, 1, height, width);
        let ta = Tensor::new(shape, slice(a, n, "a")?.to_vec())?;
        let tb = Tensor::new(shape, slice(b, n, "b")?.to_vec())?;
        *out.as_mut().ok_or_else(|| null("out"))? = ssim(&ta, &tb)?;
        Ok(())
    })
}

/// Receptive field of the eight-layer architecture.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ldct_receptive_field(
    variant_code: u32,
    n_filters: usize,
    out: *mut usize,
) -> LdctStatus {
    guard(|| {
        let arch = build_arch(variant(variant_code)?, n_filters)?;
        *out.as_mut().ok_or_else(|| null("out"))? = receptive_field(&arch);
        Ok(())
    })
}

/// Kernel-weight count `n f^2 c + n^2 f^2 (N - 2) + n f^2 c`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ldct_count_weights(
    f: u64,
    n: u64,
    c: u64,
    layers: u64,
    out: *mut u64,
) -> LdctStatus {
    guard(|| {
        *out.as_mut().ok_or_else(|| null("out"))? = count_weights(f, n, c, layers)?;
        Ok(())
    })
}
