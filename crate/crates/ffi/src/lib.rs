//! C ABI over `timebin-core`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns a
//! [`TbStatus`]; the message of the last failure on the calling thread is
//! available from [`tb_last_error`]. Panics are caught at the boundary and
//! reported as [`TbStatus::Panic`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{Complex, DMatrix};
use timebin_core::emission::CoincidenceVector;
use timebin_core::error::Error;
use timebin_core::model::{power_to_omega0, ParamName};
use timebin_core::pipeline::{default_basis, simulate_counts, PipelineOptions};
use timebin_core::sweep::{linspace, run_sweep, SweepGrid};
use timebin_core::tomography::{fidelity_bell, fidelity_mixed, project_physical, reconstruct};
use timebin_core::{DensityMatrix, ModelParams};

/// Number of coincidence measurements in a tomography set.
pub const TB_N_PROJECTORS: usize = 16;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbStatus {
    Ok = 0,
    NullPointer = 1,
    /// bad name, index, JSON or parameter value
    InvalidArgument = 2,
    /// malformed or degenerate input data
    InvalidData = 3,
    /// solver, reconstruction or fit failure
    Numeric = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Model parameters.
pub struct TbParams {
    inner: ModelParams,
}

/// Square complex matrix, usually a two-photon density matrix.
pub struct TbDensity {
    inner: DensityMatrix,
}

/// Fidelity and normalized-counts maps over (Ω₀, τ).
pub struct TbSweep {
    inner: SweepGrid,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> TbStatus {
    match e.exit_code() {
        2 => TbStatus::InvalidArgument,
        3 => TbStatus::InvalidData,
        _ => TbStatus::Numeric,
    }
}

struct Fail(TbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type Outcome = std::result::Result<(), Fail>;

fn guard(f: impl FnOnce() -> Outcome) -> TbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TbStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            TbStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(TbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn href<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn cstr<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies `s` plus a NUL into `buf`. `*needed` always receives the full size.
unsafe fn write_str(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Outcome {
    let n = s.len() + 1;
    if let Some(needed) = needed.as_mut() {
        *needed = n;
    }
    if buf.is_null() || len < n {
        return Err(Fail(TbStatus::BufferTooSmall, format!("buffer of {len} bytes, {n} needed")));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

fn param_name(name: &str) -> Result<ParamName, Fail> {
    name.parse().map_err(|_| Fail(TbStatus::InvalidArgument, format!("unknown parameter `{name}`")))
}

fn counts16(counts: &[f64]) -> Result<CoincidenceVector, Fail> {
    let arr: [f64; TB_N_PROJECTORS] = counts.try_into().expect("length checked by caller");
    Ok(CoincidenceVector::new(arr)?)
}

/// Message of the last failed call on this thread.
///
/// Writes a NUL-terminated copy into `buf`; `*needed` (if non-null) gets the
/// size including the terminator. An empty string means no error yet.
#[no_mangle]
pub unsafe extern "C" fn tb_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> TbStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match write_str(&msg, buf, len, needed) {
        Ok(()) => TbStatus::Ok,
        Err(Fail(s, _)) => s,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- parameters ----

/// Default operating point. Never null.
#[no_mangle]
pub extern "C" fn tb_params_default() -> *mut TbParams {
    Box::into_raw(Box::new(TbParams { inner: ModelParams::default() }))
}

/// Parses a parameter object; missing fields take their defaults.
#[no_mangle]
pub unsafe extern "C" fn tb_params_from_json(json: *const c_char, params: *mut *mut TbParams) -> TbStatus {
    guard(|| {
        let slot = out(params, "params")?;
        let p = ModelParams::from_json(cstr(json, "json")?)?;
        *slot = Box::into_raw(Box::new(TbParams { inner: p }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tb_params_to_json(
    params: *const TbParams,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> TbStatus {
    guard(|| write_str(&href(params, "params")?.inner.to_json(), buf, len, needed))
}

/// Sets a field by its JSON name, e.g. `"omega0"`. The value is validated.
#[no_mangle]
pub unsafe extern "C" fn tb_params_set(params: *mut TbParams, name: *const c_char, value: f64) -> TbStatus {
    guard(|| {
        let p = out(params, "params")?;
        let candidate = p.inner.with(param_name(cstr(name, "name")?)?, value);
        candidate.validate()?;
        p.inner = candidate;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tb_params_get(params: *const TbParams, name: *const c_char, value: *mut f64) -> TbStatus {
    guard(|| {
        let p = href(params, "params")?;
        *out(value, "value")? = p.inner.get(param_name(cstr(name, "name")?)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tb_params_free(params: *mut TbParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Peak Rabi frequency (THz) for an average excitation power.
#[no_mangle]
pub unsafe extern "C" fn tb_power_to_omega0(params: *const TbParams, power: f64, omega0: *mut f64) -> TbStatus {
    guard(|| {
        *out(omega0, "omega0")? = power_to_omega0(power, &href(params, "params")?.inner)?;
        Ok(())
    })
}

// ---- simulation ----

/// Evolves the dot from the ground state and fills the sixteen coincidence
/// counts (`counts` must hold [`TB_N_PROJECTORS`] values) and the emission
/// probabilities. `p_x` and `p_b` may be null.
#[no_mangle]
pub unsafe extern "C" fn tb_simulate(params: *const TbParams, counts: *mut f64, p_x: *mut f64, p_b: *mut f64) -> TbStatus {
    guard(|| {
        let p = href(params, "params")?;
        if counts.is_null() {
            return Err(null("counts"));
        }
        let (_, emission, n) = simulate_counts(&p.inner, &PipelineOptions::default())?;
        std::slice::from_raw_parts_mut(counts, TB_N_PROJECTORS).copy_from_slice(n.counts());
        if let Some(x) = p_x.as_mut() {
            *x = emission.p_x;
        }
        if let Some(b) = p_b.as_mut() {
            *b = emission.p_b;
        }
        Ok(())
    })
}

// ---- tomography ----

/// Linear-inversion estimate from sixteen counts. The result may have
/// negative eigenvalues; see [`tb_density_project`].
#[no_mangle]
pub unsafe extern "C" fn tb_reconstruct(counts: *const f64, len: usize, density: *mut *mut TbDensity) -> TbStatus {
    guard(|| {
        let slot = out(density, "density")?;
        if len != TB_N_PROJECTORS {
            return Err(Fail(TbStatus::InvalidArgument, format!("{len} counts given, {TB_N_PROJECTORS} needed")));
        }
        let n = counts16(slice(counts, len, "counts")?)?;
        let rho = reconstruct(&n, default_basis())?;
        *slot = Box::into_raw(Box::new(TbDensity { inner: rho }));
        Ok(())
    })
}

/// Builds a `dim`×`dim` matrix from row-major real and imaginary parts.
/// `imag` may be null for a real matrix.
#[no_mangle]
pub unsafe extern "C" fn tb_density_from_parts(
    dim: usize,
    real: *const f64,
    imag: *const f64,
    density: *mut *mut TbDensity,
) -> TbStatus {
    guard(|| {
        let slot = out(density, "density")?;
        if dim == 0 {
            return Err(Fail(TbStatus::InvalidArgument, "dim must be positive".into()));
        }
        let re = slice(real, dim * dim, "real")?;
        let im = if imag.is_null() { None } else { Some(slice(imag, dim * dim, "imag")?) };
        let m = DMatrix::from_fn(dim, dim, |i, j| {
            let k = i * dim + j;
            Complex::new(re[k], im.map_or(0.0, |im| im[k]))
        });
        *slot = Box::into_raw(Box::new(TbDensity { inner: DensityMatrix::from_matrix(m)? }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tb_density_dim(density: *const TbDensity, dim: *mut usize) -> TbStatus {
    guard(|| {
        *out(dim, "dim")? = href(density, "density")?.inner.dim();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tb_density_get(
    density: *const TbDensity,
    row: usize,
    col: usize,
    re: *mut f64,
    im: *mut f64,
) -> TbStatus {
    guard(|| {
        let d = &href(density, "density")?.inner;
        if row >= d.dim() || col >= d.dim() {
            return Err(Fail(TbStatus::InvalidArgument, format!("index ({row}, {col}) outside {0}x{0}", d.dim())));
        }
        let z = d.get(row, col);
        *out(re, "re")? = z.re;
        *out(im, "im")? = z.im;
        Ok(())
    })
}

/// Smallest eigenvalue; negative for an unphysical estimate.
#[no_mangle]
pub unsafe extern "C" fn tb_density_min_eigenvalue(density: *const TbDensity, value: *mut f64) -> TbStatus {
    guard(|| {
        *out(value, "value")? = href(density, "density")?.inner.min_eigenvalue();
        Ok(())
    })
}

/// Nearest unit-trace positive semidefinite matrix, as a new handle.
#[no_mangle]
pub unsafe extern "C" fn tb_density_project(density: *const TbDensity, projected: *mut *mut TbDensity) -> TbStatus {
    guard(|| {
        let slot = out(projected, "projected")?;
        let d = &href(density, "density")?.inner;
        *slot = Box::into_raw(Box::new(TbDensity { inner: project_physical(d) }));
        Ok(())
    })
}

/// Overlap with (|ee⟩ + e^{iφ}|ll⟩)/√2, returned as √⟨Φ|ρ|Φ⟩.
#[no_mangle]
pub unsafe extern "C" fn tb_fidelity_bell(density: *const TbDensity, phase: f64, fidelity: *mut f64) -> TbStatus {
    guard(|| {
        *out(fidelity, "fidelity")? = fidelity_bell(&href(density, "density")?.inner, phase)?;
        Ok(())
    })
}

/// Uhlmann fidelity tr√(√a b √a).
#[no_mangle]
pub unsafe extern "C" fn tb_fidelity_mixed(a: *const TbDensity, b: *const TbDensity, fidelity: *mut f64) -> TbStatus {
    guard(|| {
        *out(fidelity, "fidelity")? = fidelity_mixed(&href(a, "a")?.inner, &href(b, "b")?.inner)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tb_density_free(density: *mut TbDensity) {
    if !density.is_null() {
        drop(Box::from_raw(density));
    }
}

// ---- calibration ----

/// Fits `A·exp(-γt) + C` to a lifetime trace (t in ps).
#[no_mangle]
pub unsafe extern "C" fn tb_fit_decay(
    t: *const f64,
    counts: *const f64,
    len: usize,
    rate: *mut f64,
    amplitude: *mut f64,
    offset: *mut f64,
) -> TbStatus {
    guard(|| {
        let t = slice(t, len, "t")?;
        let c = slice(counts, len, "counts")?;
        let series: Vec<(f64, f64)> = t.iter().copied().zip(c.iter().copied()).collect();
        let rate = out(rate, "rate")?;
        let fit = timebin_core::calibration::fit_decay(&series)?;
        *rate = fit.rate;
        if let Some(a) = amplitude.as_mut() {
            *a = fit.amplitude;
        }
        if let Some(o) = offset.as_mut() {
            *o = fit.offset;
        }
        Ok(())
    })
}

// ---- sweep ----

/// Runs the pipeline on an evenly spaced grid. Cells that fail hold NaN.
#[no_mangle]
pub unsafe extern "C" fn tb_sweep(
    params: *const TbParams,
    omega0_min: f64,
    omega0_max: f64,
    n_omega0: usize,
    tau_min: f64,
    tau_max: f64,
    n_tau: usize,
    sweep: *mut *mut TbSweep,
) -> TbStatus {
    guard(|| {
        let slot = out(sweep, "sweep")?;
        let p = href(params, "params")?;
        let oa = linspace(omega0_min, omega0_max, n_omega0);
        let ta = linspace(tau_min, tau_max, n_tau);
        let grid = run_sweep(&p.inner, &oa, &ta, &PipelineOptions::default())?;
        *slot = Box::into_raw(Box::new(TbSweep { inner: grid }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tb_sweep_shape(sweep: *const TbSweep, n_omega0: *mut usize, n_tau: *mut usize) -> TbStatus {
    guard(|| {
        let (a, b) = href(sweep, "sweep")?.inner.shape();
        *out(n_omega0, "n_omega0")? = a;
        *out(n_tau, "n_tau")? = b;
        Ok(())
    })
}

/// Bell fidelity and normalized counts of cell (i, j); i indexes Ω₀.
/// Either output may be null.
#[no_mangle]
pub unsafe extern "C" fn tb_sweep_cell(
    sweep: *const TbSweep,
    i: usize,
    j: usize,
    fidelity: *mut f64,
    counts_norm: *mut f64,
) -> TbStatus {
    guard(|| {
        let g = &href(sweep, "sweep")?.inner;
        let (a, b) = g.shape();
        if i >= a || j >= b {
            return Err(Fail(TbStatus::InvalidArgument, format!("cell ({i}, {j}) outside {a}x{b}")));
        }
        if let Some(f) = fidelity.as_mut() {
            *f = g.fidelity(i, j);
        }
        if let Some(c) = counts_norm.as_mut() {
            *c = g.counts_norm(i, j);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tb_sweep_free(sweep: *mut TbSweep) {
    if !sweep.is_null() {
        drop(Box::from_raw(sweep));
    }
}
