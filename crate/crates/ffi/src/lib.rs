//! C ABI over the parmor library.
//!
//! Objects are opaque heap handles released with their `_free` function.
//! Every fallible call returns a `ParmorStatus`; on failure the message is
//! available from `parmor_last_error` on the same thread. Matrices are
//! passed as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use parmor::cli::run_experiment;
use parmor::eval::{h2_relative_error, FreqGrid, Target};
use parmor::linalg::{is_hurwitz, solve_lyapunov, solve_sylvester, Complex64, Matrix};
use parmor::moment_basis::exact_moment;
use parmor::moment_series::{nested_lyapunov, nested_sylvester};
use parmor::psys::{benchmark, ParametricLTI};
use parmor::rom::{assemble, Certificate, GainMap, MomentMap, ReducedModel, DEFAULT_EPSILON};
use parmor::siggen::SignalGenerator;
use parmor::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParmorStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    ConfigInvalid = 3,
    DimensionMismatch = 4,
    ParameterOutOfRange = 5,
    /// Solver breakdown, spectrum overlap, loss of stability or rank.
    Numerical = 6,
    Io = 7,
    Panic = 8,
}

impl From<&Error> for ParmorStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::ConfigInvalid { .. } => ParmorStatus::ConfigInvalid,
            Error::DimensionMismatch(_) => ParmorStatus::DimensionMismatch,
            Error::ParameterOutOfRange { .. } => ParmorStatus::ParameterOutOfRange,
            Error::Io(_) => ParmorStatus::Io,
            Error::InvalidInput(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::DuplicateFrequency(_)
            | Error::NonAnalyticCoefficient(_)
            | Error::WindowTooShort { .. }
            | Error::WindowOutsideTrajectory { .. } => ParmorStatus::InvalidInput,
            _ => ParmorStatus::Numerical,
        }
    }
}

/// Parametric linear system.
pub struct ParmorSystem {
    inner: ParametricLTI,
}

/// Signal generator `(S, L, w(0))`.
pub struct ParmorGenerator {
    inner: SignalGenerator,
}

/// Parametric reduced model.
pub struct ParmorRom {
    inner: ReducedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard<F: FnOnce() -> Result<(), (ParmorStatus, String)>>(f: F) -> ParmorStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ParmorStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ParmorStatus::Panic
        }
    }
}

fn lib(e: Error) -> (ParmorStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (ParmorStatus, String) {
    (ParmorStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ParmorStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (ParmorStatus::InvalidInput, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (ParmorStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (ParmorStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), (ParmorStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn parmor_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn parmor_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Benchmark system with `k` blocks (`n = 2k`) on `p in [0.1, 1]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn parmor_system_benchmark(k: usize, out: *mut *mut ParmorSystem) -> ParmorStatus {
    guard(|| {
        let sys = benchmark(k).map_err(lib)?;
        write_out(out, boxed(ParmorSystem { inner: sys }))
    })
}

/// Parses a system from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn parmor_system_from_json(json: *const c_char, out: *mut *mut ParmorSystem) -> ParmorStatus {
    guard(|| {
        let sys = ParametricLTI::from_json(str_arg(json, "json")?).map_err(lib)?;
        write_out(out, boxed(ParmorSystem { inner: sys }))
    })
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn parmor_system_order(sys: *const ParmorSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.inner.n)
}

/// # Safety
/// `sys` must be null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn parmor_system_free(sys: *mut ParmorSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// `W(s, p) = C(p) (s I - A(p))^{-1} B(p)` at `s = re + i im`.
///
/// # Safety
/// `sys` must be a live handle, `out_re` and `out_im` writable.
#[no_mangle]
pub unsafe extern "C" fn parmor_system_transfer(
    sys: *const ParmorSystem,
    p: f64,
    re: f64,
    im: f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> ParmorStatus {
    guard(|| {
        let w = handle(sys, "system")?.inner.transfer(p, Complex64::new(re, im)).map_err(lib)?;
        write_out(out_re, w.re)?;
        write_out(out_im, w.im)
    })
}

/// Generator with one rotation block per frequency in `freqs` and an
/// optional leading zero block.
///
/// # Safety
/// `freqs` must point to `count` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn parmor_generator_new(
    freqs: *const f64,
    count: usize,
    include_zero: bool,
    out: *mut *mut ParmorGenerator,
) -> ParmorStatus {
    guard(|| {
        let f = slice_arg(freqs, count, "freqs")?;
        let g = SignalGenerator::from_frequencies(f, include_zero).map_err(lib)?;
        write_out(out, boxed(ParmorGenerator { inner: g }))
    })
}

/// Generator order `nu`, or 0 for a null handle.
///
/// # Safety
/// `gen` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn parmor_generator_nu(gen: *const ParmorGenerator) -> usize {
    gen.as_ref().map_or(0, |g| g.inner.nu())
}

/// # Safety
/// `gen` must be null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn parmor_generator_free(gen: *mut ParmorGenerator) {
    if !gen.is_null() {
        drop(Box::from_raw(gen));
    }
}

fn matrix(rows: usize, cols: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, data)
}

fn store(m: &Matrix, out: &mut [f64]) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[i * m.ncols() + j] = m[(i, j)];
        }
    }
}

/// Solves `A X + F = X S` for `X` (n x nu). `a` is n x n, `s` nu x nu, `f`
/// and `x_out` n x nu, all row-major.
///
/// # Safety
/// The arrays must have the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn parmor_solve_sylvester(
    a: *const f64,
    n: usize,
    s: *const f64,
    nu: usize,
    f: *const f64,
    x_out: *mut f64,
) -> ParmorStatus {
    guard(|| {
        let a = matrix(n, n, slice_arg(a, n * n, "a")?);
        let s = matrix(nu, nu, slice_arg(s, nu * nu, "s")?);
        let f = matrix(n, nu, slice_arg(f, n * nu, "f")?);
        if x_out.is_null() {
            return Err(null("x_out"));
        }
        let x = solve_sylvester(&a, &s, &f).map_err(lib)?;
        store(&x, std::slice::from_raw_parts_mut(x_out, n * nu));
        Ok(())
    })
}

/// Solves `A^T X + X A + Q = 0` for symmetric `X`; all arrays n x n row-major.
///
/// # Safety
/// The arrays must have the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn parmor_solve_lyapunov(a: *const f64, n: usize, q: *const f64, x_out: *mut f64) -> ParmorStatus {
    guard(|| {
        let a = matrix(n, n, slice_arg(a, n * n, "a")?);
        let q = matrix(n, n, slice_arg(q, n * n, "q")?);
        if x_out.is_null() {
            return Err(null("x_out"));
        }
        let x = solve_lyapunov(&a, &q).map_err(lib)?;
        store(&x, std::slice::from_raw_parts_mut(x_out, n * n));
        Ok(())
    })
}

/// Exact moment row `C(p) Pi(p)` into `out[0..nu]`.
///
/// # Safety
/// Handles must be live and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn parmor_exact_moment(
    sys: *const ParmorSystem,
    gen: *const ParmorGenerator,
    p: f64,
    out: *mut f64,
    len: usize,
) -> ParmorStatus {
    guard(|| {
        let sys = handle(sys, "system")?;
        let gen = handle(gen, "generator")?;
        if len != gen.inner.nu() {
            return Err((ParmorStatus::DimensionMismatch, format!("output length {len}, expected {}", gen.inner.nu())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let m = exact_moment(&sys.inner, &gen.inner, p).map_err(lib)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(m.as_slice());
        Ok(())
    })
}

/// Reduced model from an order-`order` series at `center`, with the
/// stability-preserving gain built from the nested Lyapunov series (`Q = I`).
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn parmor_rom_series(
    sys: *const ParmorSystem,
    gen: *const ParmorGenerator,
    center: f64,
    order: usize,
    out: *mut *mut ParmorRom,
) -> ParmorStatus {
    guard(|| {
        let sys = &handle(sys, "system")?.inner;
        let gen = &handle(gen, "generator")?.inner;
        let series = nested_sylvester(sys, gen, center, order).map_err(lib)?;
        let q = Matrix::identity(sys.n, sys.n);
        let cert = Certificate::Series { series: nested_lyapunov(sys, center, order, &q).map_err(lib)? };
        let gain = GainMap::preserving(cert, DEFAULT_EPSILON).map_err(lib)?;
        let rom = assemble(gen, gain, MomentMap::Series { series }, Some(sys)).map_err(lib)?;
        write_out(out, boxed(ParmorRom { inner: rom }))
    })
}

/// Parses a reduced model from JSON.
///
/// # Safety
/// `json` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn parmor_rom_from_json(json: *const c_char, out: *mut *mut ParmorRom) -> ParmorStatus {
    guard(|| {
        let rom = ReducedModel::from_json(str_arg(json, "json")?).map_err(lib)?;
        write_out(out, boxed(ParmorRom { inner: rom }))
    })
}

/// Serializes a reduced model; free the string with `parmor_string_free`.
///
/// # Safety
/// `rom` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn parmor_rom_to_json(rom: *const ParmorRom, out: *mut *mut c_char) -> ParmorStatus {
    guard(|| {
        let text = handle(rom, "rom")?.inner.to_json().map_err(lib)?;
        let c = CString::new(text).map_err(|e| (ParmorStatus::InvalidInput, e.to_string()))?;
        write_out(out, c.into_raw())
    })
}

/// Reduced order `nu`, or 0 for a null handle.
///
/// # Safety
/// `rom` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn parmor_rom_order(rom: *const ParmorRom) -> usize {
    rom.as_ref().map_or(0, |r| r.inner.nu())
}

/// `W_r(s, p) = H(p) (s I - F(p))^{-1} G(p)`.
///
/// # Safety
/// `rom` must be a live handle, `out_re` and `out_im` writable.
#[no_mangle]
pub unsafe extern "C" fn parmor_rom_transfer(
    rom: *const ParmorRom,
    p: f64,
    re: f64,
    im: f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> ParmorStatus {
    guard(|| {
        let r = handle(rom, "rom")?.inner.eval(p).map_err(lib)?;
        let w = r.transfer(Complex64::new(re, im)).map_err(lib)?;
        write_out(out_re, w.re)?;
        write_out(out_im, w.im)
    })
}

/// Whether every eigenvalue of `F(p)` has real part below `-margin`.
///
/// # Safety
/// `rom` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn parmor_rom_is_stable(rom: *const ParmorRom, p: f64, margin: f64, out: *mut bool) -> ParmorStatus {
    guard(|| {
        let r = handle(rom, "rom")?.inner.eval(p).map_err(lib)?;
        write_out(out, is_hurwitz(&r.f, margin).map_err(lib)?)
    })
}

/// # Safety
/// `rom` must be null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn parmor_rom_free(rom: *mut ParmorRom) {
    if !rom.is_null() {
        drop(Box::from_raw(rom));
    }
}

/// Relative H2 error between system and reduced model at `p`, by
/// trapezoidal quadrature on `points` log-spaced frequencies in `[lo, hi]`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn parmor_h2_relative_error(
    sys: *const ParmorSystem,
    rom: *const ParmorRom,
    p: f64,
    lo: f64,
    hi: f64,
    points: usize,
    out: *mut f64,
) -> ParmorStatus {
    guard(|| {
        let sys = &handle(sys, "system")?.inner;
        let rom = &handle(rom, "rom")?.inner;
        let grid = FreqGrid { lo, hi, points };
        write_out(out, h2_relative_error(Target::System(sys), Target::Rom(rom), p, &grid).map_err(lib)?)
    })
}

/// Runs an experiment configuration; the run directory path is returned in
/// `run_dir` (free with `parmor_string_free`).
///
/// # Safety
/// Strings must be NUL-terminated and `run_dir` writable.
#[no_mangle]
pub unsafe extern "C" fn parmor_run_experiment(
    config_path: *const c_char,
    out_dir: *const c_char,
    force: bool,
    run_dir: *mut *mut c_char,
) -> ParmorStatus {
    guard(|| {
        let cfg = str_arg(config_path, "config_path")?;
        let out = str_arg(out_dir, "out_dir")?;
        if run_dir.is_null() {
            return Err(null("run_dir"));
        }
        let dir = run_experiment(Path::new(cfg), Path::new(out), force).map_err(lib)?;
        let c = CString::new(dir.to_string_lossy().into_owned()).map_err(|e| (ParmorStatus::InvalidInput, e.to_string()))?;
        write_out(run_dir, c.into_raw())
    })
}
