//! C ABI over `wdm_diffractive`.
//!
//! Models are opaque `WdmModel` handles created by `wdm_model_new` or
//! `wdm_model_load` and released with `wdm_model_free`. Complex arrays are
//! interleaved `(re, im)` pairs of `double`; FOV fields and matrices use
//! column-major order. Every fallible call returns a `WdmStatus`; on
//! failure `wdm_last_error_message` describes the most recent error on the
//! calling thread.
//!
//! Null pointers are rejected with `WDM_STATUS_NULL_POINTER`. Any other
//! pointer must reference at least as many elements as the call documents.
#![allow(clippy::not_unsafe_ptr_arg_deref)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use wdm_diffractive::checkpoint;
use wdm_diffractive::error::Error;
use wdm_diffractive::evaluation;
use wdm_diffractive::field::{ComplexMatrix, FovField, C64};
use wdm_diffractive::materials::Material;
use wdm_diffractive::stack::{default_channels, BitDepth, DiffractiveModel, StackGeometry};
use wdm_diffractive::training;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Format = 6,
    GeometryMismatch = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct WdmModel {
    model: DiffractiveModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> WdmStatus {
    match e {
        Error::Config(_) => WdmStatus::Config,
        Error::Parameter(_) | Error::Sizing(_) | Error::OutOfRange { .. } => WdmStatus::InvalidArgument,
        Error::NonFinite(_)
        | Error::Diverged { .. }
        | Error::DegenerateTarget
        | Error::DegenerateInput
        | Error::UndefinedMetric(_) => WdmStatus::Numerical,
        Error::GeometryMismatch { .. } => WdmStatus::GeometryMismatch,
        Error::Io(_) => WdmStatus::Io,
        Error::Format(_) => WdmStatus::Format,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WdmStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            WdmStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            WdmStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass either null or a pointer to a live object.
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

fn non_null_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: as above, with exclusive access guaranteed by the caller.
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller guarantees `len` readable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller guarantees `len` writable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn path<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    // SAFETY: the caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::Core(Error::Parameter("path is not valid UTF-8".into())))
}

fn to_complex(raw: &[f64]) -> Vec<C64> {
    raw.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect()
}

fn write_complex(values: &[C64], out: &mut [f64]) {
    for (v, o) in values.iter().zip(out.chunks_exact_mut(2)) {
        o[0] = v.re;
        o[1] = v.im;
    }
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// including the terminator, so a too-small buffer can be retried.
#[no_mangle]
pub extern "C" fn wdm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            // SAFETY: the caller provides `len` writable bytes at `buf`.
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len() + 1
    })
}

/// Creates a randomly initialized stack of the dispersion-free material.
/// `wavelengths` may be null to use the default ladder of `n_channels`
/// wavelengths in units of λ_m.
#[no_mangle]
pub extern "C" fn wdm_model_new(
    layers: usize,
    layer_side: usize,
    fov_side: usize,
    n_channels: usize,
    wavelengths: *const f64,
    seed: u64,
    out: *mut *mut WdmModel,
) -> WdmStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        let channels = if wavelengths.is_null() {
            default_channels(n_channels)
        } else {
            slice(wavelengths, n_channels, "wavelengths")?.to_vec()
        };
        let g = StackGeometry::new(layers, layer_side, fov_side, channels)?;
        let model = DiffractiveModel::random(g, Material::dispersion_free(), BitDepth::Continuous, seed)?;
        *out = Box::into_raw(Box::new(WdmModel { model }));
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn wdm_model_load(path_utf8: *const c_char, out: *mut *mut WdmModel) -> WdmStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        let model = checkpoint::load(path(path_utf8)?)?.model;
        *out = Box::into_raw(Box::new(WdmModel { model }));
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn wdm_model_save(model: *const WdmModel, path_utf8: *const c_char) -> WdmStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        checkpoint::save(path(path_utf8)?, &m.model, None)?;
        Ok(())
    })
}

/// Releases a handle; null is ignored.
#[no_mangle]
pub extern "C" fn wdm_model_free(model: *mut WdmModel) {
    if !model.is_null() {
        // SAFETY: the handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(model) });
    }
}

#[no_mangle]
pub extern "C" fn wdm_model_n_channels(model: *const WdmModel) -> usize {
    non_null(model, "model").map_or(0, |m| m.model.geometry().n_channels())
}

/// Pixels per FOV (`N_i = N_o`).
#[no_mangle]
pub extern "C" fn wdm_model_fov_pixels(model: *const WdmModel) -> usize {
    non_null(model, "model").map_or(0, |m| m.model.geometry().fov_pixels())
}

/// `q = 0` selects continuous thickness, otherwise `1 ≤ q ≤ 32` bits.
#[no_mangle]
pub extern "C" fn wdm_model_set_bit_depth(model: *mut WdmModel, q: u32) -> WdmStatus {
    guard(|| {
        let m = non_null_mut(model, "model")?;
        let depth = if q == 0 {
            BitDepth::Continuous
        } else {
            BitDepth::bits(q)?
        };
        m.model.set_bit_depth(depth);
        Ok(())
    })
}

/// Runs channel `channel` on `input` (`2·N_i` doubles), writing `2·N_o`
/// doubles to `output`.
#[no_mangle]
pub extern "C" fn wdm_model_forward(
    model: *const WdmModel,
    channel: usize,
    input: *const f64,
    output: *mut f64,
) -> WdmStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let g = m.model.geometry();
        let n = g.fov_pixels();
        let field = FovField::new(g.fov_side, to_complex(slice(input, 2 * n, "input")?))?;
        let result = m.model.forward(&field, channel)?;
        write_complex(result.values(), slice_mut(output, 2 * n, "output")?);
        Ok(())
    })
}

/// Writes the realized `N_o × N_i` transform of `channel` to `out`
/// (`2·N_o·N_i` doubles, column-major).
#[no_mangle]
pub extern "C" fn wdm_model_extract_transform(model: *const WdmModel, channel: usize, out: *mut f64) -> WdmStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let n = m.model.geometry().fov_pixels();
        let a = evaluation::extract_transform(&m.model, channel)?;
        write_complex(a.data(), slice_mut(out, 2 * n * n, "out")?);
        Ok(())
    })
}

fn matrices(a: *const f64, b: *const f64, rows: usize, cols: usize) -> Result<(ComplexMatrix, ComplexMatrix), Failure> {
    let len = 2 * rows * cols;
    let a = ComplexMatrix::from_column_major(rows, cols, to_complex(slice(a, len, "a")?))?;
    let b = ComplexMatrix::from_column_major(rows, cols, to_complex(slice(b, len, "b")?))?;
    Ok((a, b))
}

/// Scale-matched normalized transformation error between target `a` and
/// realized `b`, both `rows × cols` column-major.
#[no_mangle]
pub extern "C" fn wdm_mse_transformation(
    a: *const f64,
    b: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> WdmStatus {
    guard(|| {
        let (a, b) = matrices(a, b, rows, cols)?;
        *non_null_mut(out, "out")? = evaluation::mse_transformation(&a, &b)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn wdm_cosine_similarity(
    a: *const f64,
    b: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> WdmStatus {
    guard(|| {
        let (a, b) = matrices(a, b, rows, cols)?;
        *non_null_mut(out, "out")? = evaluation::cosine_similarity(&a, &b)?;
        Ok(())
    })
}

/// Normalized output error between `target` and `output`, each a square
/// FOV of `n` pixels.
#[no_mangle]
pub extern "C" fn wdm_channel_loss(target: *const f64, output: *const f64, n: usize, out: *mut f64) -> WdmStatus {
    guard(|| {
        let side = (n as f64).sqrt().round() as usize;
        let t = FovField::new(side, to_complex(slice(target, 2 * n, "target")?))?;
        let o = FovField::new(side, to_complex(slice(output, 2 * n, "output")?))?;
        *non_null_mut(out, "out")? = training::channel_loss(&t, &o)?;
        Ok(())
    })
}
