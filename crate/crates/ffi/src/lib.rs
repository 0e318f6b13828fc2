//! C interface to `qmetro`.
//!
//! Every fallible call returns a [`QmStatus`]; on failure a message is kept
//! per thread and read back with [`qm_last_error`]. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use libc::{c_char, size_t};

use qmetro::channels::LossMode;
use qmetro::measurement::{default_phi_grid, optimize_measurement};
use qmetro::precision::{chop_optimize, crb_curve, optimize_ucs_a, CurveOptions, EtaGrid, PrecisionCurve};
use qmetro::qfi::{crb, lossy_qfi, QfiRoute};
use qmetro::states::{mean_photons_through_phase, StateSpec};
use qmetro::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Truncation = 4,
    NotConverged = 5,
    ZeroInformation = 6,
    Unsupported = 7,
    IndexOutOfRange = 8,
    Panic = 9,
    Other = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmLossMode {
    BothArms = 0,
    PhaseArmOnly = 1,
}

impl From<QmLossMode> for LossMode {
    fn from(m: QmLossMode) -> Self {
        match m {
            QmLossMode::BothArms => LossMode::BothArms,
            QmLossMode::PhaseArmOnly => LossMode::PhaseArmOnly,
        }
    }
}

/// A parsed state descriptor.
pub struct QmState(StateSpec);

/// A precision curve over a transmissivity grid.
pub struct QmCurve(PrecisionCurve);

/// One curve point. `a_opt` is NaN when the curve has no unbalancing parameter.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QmPoint {
    pub eta: f64,
    pub delta_phi: f64,
    pub m: f64,
    pub n_phi: f64,
    pub a_opt: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QmUcsOptimum {
    pub a: f64,
    pub delta_phi: f64,
    pub f_q: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QmChopOptimum {
    pub n_phi: f64,
    pub a: f64,
    pub delta_phi: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QmMeasurement {
    pub phi: f64,
    pub a: f64,
    pub f_c: f64,
    pub m: f64,
    pub delta_phi: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Fail {
    Null(&'static str),
    Index(usize, usize),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn status_of(e: &Error) -> QmStatus {
    match e.root() {
        Error::InvalidArgument(_) | Error::DimensionMismatch(_) | Error::NotHermitian(_) => QmStatus::InvalidArgument,
        Error::Parse(_) => QmStatus::Parse,
        Error::Truncation { .. } => QmStatus::Truncation,
        Error::NotConverged { .. } | Error::PosteriorEscaped { .. } => QmStatus::NotConverged,
        Error::ZeroInformation | Error::DivergentSensitivity => QmStatus::ZeroInformation,
        Error::Unsupported(_) | Error::DegenerateBasis => QmStatus::Unsupported,
        _ => QmStatus::Other,
    }
}

fn call(f: impl FnOnce() -> Result<(), Fail>) -> QmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            QmStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            QmStatus::NullPointer
        }
        Ok(Err(Fail::Index(i, len))) => {
            set_error(&format!("index {i} out of range for length {len}"));
            QmStatus::IndexOutOfRange
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            QmStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next `qm_` call on the same thread.
#[no_mangle]
pub extern "C" fn qm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a state such as `cat:alpha=3` or `ucs:a=0.7,nphi=4.45`.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qm_state_parse(text: *const c_char, out: *mut *mut QmState) -> QmStatus {
    call(|| {
        if text.is_null() {
            return Err(Fail::Null("text"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let s = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| Error::Parse("state text is not UTF-8".into()))?;
        let spec: StateSpec = s.trim().parse()?;
        out.write(Box::into_raw(Box::new(QmState(spec))));
        Ok(())
    })
}

/// # Safety
/// `state` must come from [`qm_state_parse`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn qm_state_free(state: *mut QmState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Writes the canonical text of `state` into `buf` (always NUL-terminated when
/// `len > 0`) and the full length without the NUL into `needed`.
///
/// # Safety
/// `buf` must hold `len` bytes or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn qm_state_describe(
    state: *const QmState,
    buf: *mut c_char,
    len: size_t,
    needed: *mut size_t,
) -> QmStatus {
    call(|| {
        let text = get(state, "state")?.0.to_string();
        if len > 0 {
            if buf.is_null() {
                return Err(Fail::Null("buf"));
            }
            let n = text.len().min(len - 1);
            ptr::copy_nonoverlapping(text.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        if !needed.is_null() {
            needed.write(text.len());
        }
        Ok(())
    })
}

/// Mean photon number through the phase shift.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qm_state_mean_photons(state: *const QmState, out: *mut f64) -> QmStatus {
    call(|| {
        let n = mean_photons_through_phase(&get(state, "state")?.0)?;
        put(out, n, "out")
    })
}

/// Quantum Fisher information after loss of transmissivity `eta`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qm_lossy_qfi(state: *const QmState, eta: f64, loss: QmLossMode, out: *mut f64) -> QmStatus {
    call(|| {
        let r = lossy_qfi(&get(state, "state")?.0, eta, loss.into(), QfiRoute::Auto, None)?;
        put(out, r.f_q, "out")
    })
}

/// `1 / sqrt(m f_q)`; zero information reports `QM_STATUS_ZERO_INFORMATION`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qm_crb(f_q: f64, m: f64, out: *mut f64) -> QmStatus {
    call(|| put(out, crb(f_q, m)?, "out"))
}

/// Cramér-Rao curve of `state` on `count` uniform points in `[eta_min, eta_max]`.
///
/// # Safety
/// Pointers must be valid; free the result with [`qm_curve_free`].
#[no_mangle]
pub unsafe extern "C" fn qm_crb_curve(
    state: *const QmState,
    eta_min: f64,
    eta_max: f64,
    count: size_t,
    r_phi: f64,
    loss: QmLossMode,
    out: *mut *mut QmCurve,
) -> QmStatus {
    call(|| {
        let spec = get(state, "state")?.0;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let grid = EtaGrid::new(eta_min, eta_max, count)?;
        let opts = CurveOptions {
            loss_mode: loss.into(),
            ..CurveOptions::default()
        };
        let curve = crb_curve(&spec, &grid.values(), r_phi, opts)?;
        out.write(Box::into_raw(Box::new(QmCurve(curve))));
        Ok(())
    })
}

/// # Safety
/// `curve` must be valid or null (null gives 0).
#[no_mangle]
pub unsafe extern "C" fn qm_curve_len(curve: *const QmCurve) -> size_t {
    curve.as_ref().map_or(0, |c| c.0.points.len())
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qm_curve_point(curve: *const QmCurve, index: size_t, out: *mut QmPoint) -> QmStatus {
    call(|| {
        let c = &get(curve, "curve")?.0;
        let p = c.points.get(index).ok_or(Fail::Index(index, c.points.len()))?;
        let point = QmPoint {
            eta: p.eta,
            delta_phi: p.delta_phi,
            m: p.m,
            n_phi: p.n_phi,
            a_opt: p.a_opt.unwrap_or(f64::NAN),
        };
        put(out, point, "out")
    })
}

/// # Safety
/// `curve` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn qm_curve_free(curve: *mut QmCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Best unbalancing `a` for a UCS of `n_phi` photons.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qm_optimize_ucs_a(n_phi: f64, eta: f64, r_phi: f64, out: *mut QmUcsOptimum) -> QmStatus {
    call(|| {
        let o = optimize_ucs_a(n_phi, eta, r_phi)?;
        put(
            out,
            QmUcsOptimum {
                a: o.a,
                delta_phi: o.delta_phi,
                f_q: o.f_q,
            },
            "out",
        )
    })
}

/// Best UCS size and unbalancing with the size capped by a balanced cat of `alpha_bal_max`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qm_chop_optimize(
    eta: f64,
    r_phi: f64,
    alpha_bal_max: f64,
    out: *mut QmChopOptimum,
) -> QmStatus {
    call(|| {
        let o = chop_optimize(eta, r_phi, alpha_bal_max, &[])?;
        put(
            out,
            QmChopOptimum {
                n_phi: o.n_phi,
                a: o.a,
                delta_phi: o.delta_phi,
            },
            "out",
        )
    })
}

/// Best readout phase and implied precision for displacement `beta` and photon counting.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qm_measurement_optimum(
    state: *const QmState,
    eta: f64,
    beta: f64,
    r_phi: f64,
    out: *mut QmMeasurement,
) -> QmStatus {
    call(|| {
        let o = optimize_measurement(&get(state, "state")?.0, eta, beta, &default_phi_grid(), r_phi)?;
        put(
            out,
            QmMeasurement {
                phi: o.phi,
                a: o.a,
                f_c: o.f_c,
                m: o.m,
                delta_phi: o.delta_phi,
            },
            "out",
        )
    })
}
