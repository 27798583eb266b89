//! C ABI over the numerical core.
//!
//! Every function returns an [`SlStatus`]; on failure the message is available
//! from [`sl_last_error`] on the same thread. Handles are opaque, created by a
//! `*_new`/`*_from_*` call and released by the matching `*_free`. Panics are
//! caught at the boundary and reported as `SL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use schatten_lab::discrete_operators::{commutator, riesz_matrix, RieszMode};
use schatten_lab::dyadic_grid::{GridWindow, Shift};
use schatten_lab::function_spaces::{besov_continuous, besov_dyadic, sobolev_seminorm, GradientScheme};
use schatten_lab::haar_system::SampledFunction;
use schatten_lab::reporting::report_json;
use schatten_lab::schatten_spectra::{schatten_norm, singular_values, SingularSpectrum};
use schatten_lab::symbols::{symbol_library, SymbolSpec};
use schatten_lab::verification_harness::{parse_config, run_experiment_with, SpectrumCache};
use schatten_lab::weights::{a2_constant, Weight, WeightSpec};
use schatten_lab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    BufferTooSmall = 3,
    Unresolvable = 4,
    OutsideWindow = 5,
    IncompatibleGrids = 6,
    NonPositiveWeight = 7,
    NonFinite = 8,
    Numerical = 9,
    Config = 10,
    Io = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlRieszMode {
    Periodic = 0,
    Kernel = 1,
    Filtered = 2,
}

impl From<SlRieszMode> for RieszMode {
    fn from(m: SlRieszMode) -> Self {
        match m {
            SlRieszMode::Periodic => RieszMode::Periodic,
            SlRieszMode::Kernel => RieszMode::Kernel,
            SlRieszMode::Filtered => RieszMode::Filtered,
        }
    }
}

/// Sample window of the unit cube.
pub struct SlWindow(GridWindow);

/// Real samples on a window.
pub struct SlFunction(SampledFunction);

/// Positive weight on a window.
pub struct SlWeight(Weight);

/// Nonincreasing singular values.
pub struct SlSpectrum(SingularSpectrum);

struct Failure(SlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => SlStatus::InvalidArgument,
            Error::Unresolvable { .. } => SlStatus::Unresolvable,
            Error::OutsideWindow(_) => SlStatus::OutsideWindow,
            Error::IncompatibleGrids(_) => SlStatus::IncompatibleGrids,
            Error::NonPositiveWeight { .. } => SlStatus::NonPositiveWeight,
            Error::NonFinite(_) => SlStatus::NonFinite,
            Error::Numerical(_) => SlStatus::Numerical,
            Error::Config(_) => SlStatus::Config,
            Error::Io(_) => SlStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome) -> SlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SlStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(SlStatus::InvalidArgument, format!("{what} is not UTF-8: {e}")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Outcome {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Outcome {
    write_out(out, Box::into_raw(Box::new(value)), "output handle pointer")
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Outcome {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < values.len() {
        return Err(Failure(SlStatus::BufferTooSmall, format!("buffer holds {len} values, {} needed", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn sl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Window `[0,1)^dim` with `samples` points per side (a power of two).
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sl_window_new(dim: usize, samples: usize, out: *mut *mut SlWindow) -> SlStatus {
    guard(|| write_handle(out, SlWindow(GridWindow::unit(dim, samples)?)))
}

/// # Safety
/// `w` must be null or a handle from [`sl_window_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sl_window_free(w: *mut SlWindow) {
    free_handle(w)
}

/// Number of samples and the coarsest and finest cube levels.
///
/// # Safety
/// `w` must be a live handle; the output pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sl_window_info(w: *const SlWindow, len: *mut usize, k_min: *mut i32, k_max: *mut i32) -> SlStatus {
    guard(|| {
        let w = &borrow(w, "window")?.0;
        write_out(len, w.len(), "len")?;
        write_out(k_min, w.k_min(), "k_min")?;
        write_out(k_max, w.k_max(), "k_max")
    })
}

/// Function from `len` samples in row-major order, last axis fastest.
///
/// # Safety
/// `w` must be a live handle and `values` valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn sl_function_from_values(w: *const SlWindow, values: *const f64, len: usize, out: *mut *mut SlFunction) -> SlStatus {
    guard(|| {
        let w = &borrow(w, "window")?.0;
        if values.is_null() {
            return Err(null("values"));
        }
        let v = std::slice::from_raw_parts(values, len).to_vec();
        write_handle(out, SlFunction(SampledFunction::new(w.clone(), v)?))
    })
}

/// Samples a symbol given in the text form used by the CLI, e.g. `gaussian:0.1` or `sine:1,1`.
///
/// # Safety
/// `w` must be a live handle, `spec` a NUL-terminated string, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sl_function_from_symbol(w: *const SlWindow, spec: *const c_char, out: *mut *mut SlFunction) -> SlStatus {
    guard(|| {
        let w = &borrow(w, "window")?.0;
        let s: SymbolSpec = text(spec, "symbol")?.parse()?;
        write_handle(out, SlFunction(symbol_library(&s.with_default_seed(0), w)?))
    })
}

/// Copies the samples into `out`, which must hold at least the window length.
///
/// # Safety
/// `f` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn sl_function_values(f: *const SlFunction, out: *mut f64, len: usize) -> SlStatus {
    guard(|| copy_out(&borrow(f, "function")?.0.values, out, len))
}

/// # Safety
/// `f` must be null or a live function handle.
#[no_mangle]
pub unsafe extern "C" fn sl_function_free(f: *mut SlFunction) {
    free_handle(f)
}

/// Weight from its text form: `constant[:c]` or `power:alpha`.
///
/// # Safety
/// `w` must be a live handle, `spec` a NUL-terminated string, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sl_weight_from_spec(w: *const SlWindow, spec: *const c_char, out: *mut *mut SlWeight) -> SlStatus {
    guard(|| {
        let w = &borrow(w, "window")?.0;
        let s: WeightSpec = text(spec, "weight")?.parse()?;
        write_handle(out, SlWeight(Weight::from_spec(w, &s)?))
    })
}

/// # Safety
/// `w` must be null or a live weight handle.
#[no_mangle]
pub unsafe extern "C" fn sl_weight_free(w: *mut SlWeight) {
    free_handle(w)
}

/// A₂ constant over all shifted window cubes.
///
/// # Safety
/// `w` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sl_weight_a2(w: *const SlWeight, out: *mut f64) -> SlStatus {
    guard(|| write_out(out, a2_constant(&borrow(w, "weight")?.0), "out"))
}

/// Continuous Besov functional over sample pairs.
///
/// # Safety
/// `f` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sl_besov_continuous(f: *const SlFunction, p: f64, out: *mut f64) -> SlStatus {
    guard(|| write_out(out, besov_continuous(&borrow(f, "function")?.0, p)?, "out"))
}

/// Dyadic Besov functional on the standard system.
///
/// # Safety
/// `f` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sl_besov_dyadic(f: *const SlFunction, p: f64, out: *mut f64) -> SlStatus {
    guard(|| {
        let f = &borrow(f, "function")?.0;
        write_out(out, besov_dyadic(f, p, &Shift::zero(f.window.dim()))?, "out")
    })
}

/// `‖∇f‖_{L^p}` with centered differences.
///
/// # Safety
/// `f` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sl_sobolev_seminorm(f: *const SlFunction, p: f64, out: *mut f64) -> SlStatus {
    guard(|| write_out(out, sobolev_seminorm(&borrow(f, "function")?.0, p, GradientScheme::Centered)?, "out"))
}

/// Singular values of `[b, R_j]` on `L²(w)`; `weight` may be null for the unweighted space.
///
/// # Safety
/// `b` must be a live handle, `weight` null or a live handle on the same window, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sl_commutator_spectrum(
    b: *const SlFunction,
    weight: *const SlWeight,
    j: usize,
    mode: SlRieszMode,
    out: *mut *mut SlSpectrum,
) -> SlStatus {
    guard(|| {
        let b = &borrow(b, "function")?.0;
        let mut op = commutator(b, &riesz_matrix(j, &b.window, mode.into())?)?;
        if let Some(w) = weight.as_ref() {
            op = op.with_weight(&w.0)?;
        }
        write_handle(out, SlSpectrum(singular_values(&op)?))
    })
}

/// # Safety
/// `s` must be a live handle and `len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sl_spectrum_len(s: *const SlSpectrum, len: *mut usize) -> SlStatus {
    guard(|| write_out(len, borrow(s, "spectrum")?.0.len(), "len"))
}

/// # Safety
/// `s` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn sl_spectrum_values(s: *const SlSpectrum, out: *mut f64, len: usize) -> SlStatus {
    guard(|| copy_out(&borrow(s, "spectrum")?.0.values, out, len))
}

/// Schatten-Lorentz functional; pass `q = INFINITY` for the weak class.
///
/// # Safety
/// `s` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sl_spectrum_schatten(s: *const SlSpectrum, p: f64, q: f64, out: *mut f64) -> SlStatus {
    guard(|| write_out(out, schatten_norm(&borrow(s, "spectrum")?.0, p, q)?, "out"))
}

/// # Safety
/// `s` must be null or a live spectrum handle.
#[no_mangle]
pub unsafe extern "C" fn sl_spectrum_free(s: *mut SlSpectrum) {
    free_handle(s)
}

/// Runs every section of a config given as text. `report_json` receives a JSON
/// array with one report per section, to be released with [`sl_string_free`];
/// `passed` is 1 when every check holds.
///
/// # Safety
/// `config` must be a NUL-terminated string; the output pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sl_verify(config: *const c_char, report_json_out: *mut *mut c_char, passed: *mut c_int) -> SlStatus {
    guard(|| {
        if report_json_out.is_null() || passed.is_null() {
            return Err(null("output pointer"));
        }
        let cfgs = parse_config(text(config, "config")?)?;
        let cache = SpectrumCache::new();
        let mut all = true;
        let mut docs = Vec::new();
        for cfg in &cfgs {
            let r = run_experiment_with(cfg, &cache)?;
            all &= r.passed();
            docs.push(report_json(&r, cfg)?);
        }
        let body = format!("[{}]", docs.iter().map(|d| d.trim_end()).collect::<Vec<_>>().join(","));
        let c = CString::new(body).map_err(|e| Failure(SlStatus::InvalidArgument, e.to_string()))?;
        write_out(report_json_out, c.into_raw(), "report_json")?;
        write_out(passed, c_int::from(all), "passed")
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(sl_last_error()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn errors_map_to_status_and_message() {
        let mut w = ptr::null_mut();
        assert_eq!(unsafe { sl_window_new(2, 12, &mut w) }, SlStatus::InvalidArgument);
        assert!(w.is_null());
        assert!(last_error().contains("12"));
        assert_eq!(unsafe { sl_window_new(2, 8, ptr::null_mut()) }, SlStatus::NullPointer);
        let mut len = 0;
        assert_eq!(unsafe { sl_spectrum_len(ptr::null(), &mut len) }, SlStatus::NullPointer);
    }

    #[test]
    fn version_matches_crate() {
        let v = unsafe { CStr::from_ptr(sl_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
