//! C ABI over `jscc-core`.
//!
//! Every fallible call returns a [`JsccStatus`]. On failure a message is kept
//! per thread and can be read with [`jscc_last_error`]. Complex buffers are
//! interleaved `re, im` doubles; images are row-major `H×W×C` doubles in
//! `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use jscc_core::config::ExperimentConfig;
use jscc_core::data::Image;
use jscc_core::error::Error;
use jscc_core::experiments::load_for_eval;
use jscc_core::metrics;
use jscc_core::model::{transmit_image, ModelParams};
use jscc_core::ofdm::{self, OfdmConfig};
use num_complex::Complex64;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JsccStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Checkpoint = 5,
    Numeric = 6,
    Panic = 7,
}

/// A trained model loaded from a checkpoint.
pub struct JsccModel {
    params: ModelParams,
    config: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(JsccStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::ShapeMismatch { .. } => JsccStatus::ShapeMismatch,
            Error::NonFinite { .. } | Error::ZeroSignal | Error::Diverged { .. } => JsccStatus::Numeric,
            Error::Io(_) => JsccStatus::Io,
            Error::Checkpoint(_) => JsccStatus::Checkpoint,
            _ => JsccStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(JsccStatus::NullPointer, format!("{} is null", what))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(JsccStatus::InvalidArgument, msg.into())
}

fn set_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default());
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> JsccStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(None);
            JsccStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(Some(format!("panic: {}", msg)));
            JsccStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn complex(iq: &[f64]) -> Result<Vec<Complex64>, Failure> {
    if iq.len() % 2 != 0 {
        return Err(invalid("interleaved complex buffer has odd length"));
    }
    Ok(iq.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
}

fn image(pixels: &[f64], h: usize, w: usize, c: usize) -> Result<Image, Failure> {
    Ok(Image::new(h, w, c, pixels.to_vec())?)
}

/// Message for the last failed call on this thread, or null after a
/// successful call. Valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn jscc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn jscc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `jscc train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer. On
/// success `*out` owns a model that must be released with [`jscc_model_free`].
#[no_mangle]
pub unsafe extern "C" fn jscc_model_load(path: *const c_char, out: *mut *mut JsccModel) -> JsccStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let (params, config) = load_for_eval(Path::new(path), None)?;
        *out = Box::into_raw(Box::new(JsccModel { params, config }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a pointer from [`jscc_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn jscc_model_free(model: *mut JsccModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Image dimensions the model was trained on.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jscc_model_image_shape(
    model: *const JsccModel,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> JsccStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let a = &m.params.arch;
        *out(height, "height")? = a.height;
        *out(width, "width")? = a.width;
        *out(channels, "channels")? = a.channels;
        Ok(())
    })
}

/// Complex time samples in one transmitted packet.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jscc_model_packet_len(model: *const JsccModel, len: *mut usize) -> JsccStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out(len, "len")? = m.params.arch.packet_len();
        Ok(())
    })
}

/// Sends one image through a multipath channel and reconstructs it.
///
/// The channel is drawn from stream `index` of `seed`, so the call matches
/// the first realization `jscc eval` uses for test image `index`. Pass
/// `INFINITY` as `clip_ratio` to disable clipping. `tx` may be null;
/// otherwise it receives `2 * packet_len` interleaved doubles.
///
/// # Safety
/// `pixels` and `recon` must hold `pixels_len` doubles; `tx`, when not
/// null, must hold `tx_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn jscc_model_transmit(
    model: *const JsccModel,
    pixels: *const f64,
    pixels_len: usize,
    snr_db: f64,
    clip_ratio: f64,
    taps: usize,
    seed: u64,
    index: usize,
    recon: *mut f64,
    tx: *mut f64,
    tx_len: usize,
) -> JsccStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let a = &m.params.arch;
        let pixels = slice(pixels, pixels_len, "pixels")?;
        let img = image(pixels, a.height, a.width, a.channels)?;
        let recon = slice_mut(recon, pixels_len, "recon")?;
        if !tx.is_null() && tx_len != 2 * a.packet_len() {
            return Err(Failure(
                JsccStatus::ShapeMismatch,
                format!("tx needs {} doubles, got {}", 2 * a.packet_len(), tx_len),
            ));
        }
        let mut cfg = m.config.eval_config(snr_db, clip_ratio, taps);
        cfg.realizations = 1;
        cfg.seed = seed;
        let (r, packet) = transmit_image(&m.params, &img, index, &cfg)?.remove(0);
        recon.copy_from_slice(r.pixels());
        if !tx.is_null() {
            let tx = slice_mut(tx, tx_len, "tx")?;
            for (d, z) in tx.chunks_exact_mut(2).zip(&packet) {
                d[0] = z.re;
                d[1] = z.im;
            }
        }
        Ok(())
    })
}

/// Channel uses per pixel.
///
/// # Safety
/// `cpp` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jscc_cpp(
    fft_size: usize,
    cp_len: usize,
    pilot_symbols: usize,
    data_symbols: usize,
    height: usize,
    width: usize,
    channels: usize,
    cpp: *mut f64,
) -> JsccStatus {
    guard(|| {
        let cfg = OfdmConfig {
            fft_size,
            cp_len,
            pilot_symbols,
            data_symbols,
            ..OfdmConfig::default()
        };
        cfg.validate()?;
        if height * width * channels == 0 {
            return Err(invalid("image has no pixels"));
        }
        *out(cpp, "cpp")? = cfg.cpp(height, width, channels);
        Ok(())
    })
}

/// PSNR in dB between two `H×W×C` images.
///
/// # Safety
/// `a` and `b` must hold `height * width * channels` doubles; `psnr` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jscc_psnr(
    a: *const f64,
    b: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    max_val: f64,
    psnr: *mut f64,
) -> JsccStatus {
    guard(|| {
        let n = height * width * channels;
        let a = image(slice(a, n, "a")?, height, width, channels)?;
        let b = image(slice(b, n, "b")?, height, width, channels)?;
        *out(psnr, "psnr")? = metrics::psnr(&a, &b, max_val)?;
        Ok(())
    })
}

/// Mean SSIM between two `H×W×C` images.
///
/// # Safety
/// `a` and `b` must hold `height * width * channels` doubles; `ssim` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jscc_ssim(
    a: *const f64,
    b: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    ssim: *mut f64,
) -> JsccStatus {
    guard(|| {
        let n = height * width * channels;
        let a = image(slice(a, n, "a")?, height, width, channels)?;
        let b = image(slice(b, n, "b")?, height, width, channels)?;
        *out(ssim, "ssim")? = metrics::ssim(&a, &b)?;
        Ok(())
    })
}

/// PAPR in dB of `iq_len / 2` complex samples.
///
/// # Safety
/// `iq` must hold `iq_len` doubles; `papr_db` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jscc_papr_db(iq: *const f64, iq_len: usize, papr_db: *mut f64) -> JsccStatus {
    guard(|| {
        let x = complex(slice(iq, iq_len, "iq")?)?;
        *out(papr_db, "papr_db")? = ofdm::papr_db(&x)?;
        Ok(())
    })
}

/// Clips samples in place to amplitude `clip_ratio * sqrt(signal_power)`.
///
/// # Safety
/// `iq` must hold `iq_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn jscc_clip(iq: *mut f64, iq_len: usize, clip_ratio: f64, signal_power: f64) -> JsccStatus {
    guard(|| {
        if clip_ratio.is_nan() || clip_ratio <= 0.0 || !(signal_power > 0.0 && signal_power.is_finite()) {
            return Err(invalid("clip ratio and signal power must be positive"));
        }
        let iq = slice_mut(iq, iq_len, "iq")?;
        let y = ofdm::clip(&complex(iq)?, clip_ratio, signal_power);
        for (d, z) in iq.chunks_exact_mut(2).zip(&y) {
            d[0] = z.re;
            d[1] = z.im;
        }
        Ok(())
    })
}
