//! C ABI over a trained hybrid model and its particle-filter belief.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `*_free`. Every fallible call returns a [`PwshsStatus`]; on
//! failure [`pwshs_last_error`] describes the problem until the next failing
//! call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pwshs::learner::HybridModel;
use pwshs::tracking::{self, BeliefState, FilterConfig};
use pwshs::{Error, StateVec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PwshsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// Opaque trained model.
pub struct PwshsModel {
    inner: HybridModel,
}

/// Opaque particle belief plus the filter settings it was created with.
pub struct PwshsBelief {
    belief: BeliefState,
    cfg: FilterConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> PwshsStatus {
    match e {
        Error::Input(_) => PwshsStatus::InvalidArgument,
        Error::Config(_) => PwshsStatus::Config,
        Error::Numerical { .. } => PwshsStatus::Numerical,
        Error::Io(_) | Error::Json(_) => PwshsStatus::Io,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (PwshsStatus, String)>) -> PwshsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PwshsStatus::Ok,
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            PwshsStatus::Panic
        }
    }
}

fn lib(e: Error) -> (PwshsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PwshsStatus, String) {
    (PwshsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (PwshsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the most recent failure on this thread; empty if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn pwshs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a model directory written by `pwshs train`.
///
/// # Safety
/// `dir` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pwshs_model_load(dir: *const c_char, out: *mut *mut PwshsModel) -> PwshsStatus {
    guard(|| {
        if dir.is_null() {
            return Err(null("dir"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dir = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| (PwshsStatus::InvalidArgument, "dir is not UTF-8".to_string()))?;
        let inner = HybridModel::load(Path::new(dir)).map_err(lib)?;
        *out = Box::into_raw(Box::new(PwshsModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`pwshs_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pwshs_model_free(model: *mut PwshsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of modes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pwshs_model_num_modes(model: *const PwshsModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_modes())
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pwshs_model_dim(model: *const PwshsModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dim())
}

/// Create a belief with `particles` particles around `x0`.
/// `obs_noise` is the observation noise variance.
///
/// # Safety
/// `x0` must point to `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pwshs_belief_new(
    model: *const PwshsModel,
    x0: *const f64,
    dim: usize,
    particles: usize,
    obs_noise: f64,
    seed: u64,
    out: *mut *mut PwshsBelief,
) -> PwshsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let x0 = slice(x0, dim, "x0")?;
        if dim != m.inner.dim() {
            return Err((
                PwshsStatus::InvalidArgument,
                format!("x0 has dim {dim}, model expects {}", m.inner.dim()),
            ));
        }
        let cfg = FilterConfig {
            particles,
            obs_noise,
            ..FilterConfig::default()
        };
        cfg.validate().map_err(lib)?;
        let x0 = StateVec::from_slice(x0).map_err(lib)?;
        let belief = tracking::init_belief(&m.inner, &x0, particles, obs_noise, seed).map_err(lib)?;
        *out = Box::into_raw(Box::new(PwshsBelief { belief, cfg }));
        Ok(())
    })
}

/// # Safety
/// `belief` must come from [`pwshs_belief_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pwshs_belief_free(belief: *mut PwshsBelief) {
    if !belief.is_null() {
        drop(Box::from_raw(belief));
    }
}

/// Advance the belief one step through the model.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn pwshs_belief_propagate(
    belief: *mut PwshsBelief,
    model: *const PwshsModel,
    seed: u64,
) -> PwshsStatus {
    guard(|| {
        let b = belief.as_mut().ok_or_else(|| null("belief"))?;
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        b.belief = tracking::propagate(&b.belief, &m.inner, seed).map_err(lib)?;
        Ok(())
    })
}

/// Condition on an observation. `diverged` (optional) receives 1 when every
/// weight underflowed and the belief fell back to uniform weights.
///
/// # Safety
/// `obs` must point to `dim` doubles; `diverged` may be null.
#[no_mangle]
pub unsafe extern "C" fn pwshs_belief_update(
    belief: *mut PwshsBelief,
    obs: *const f64,
    dim: usize,
    seed: u64,
    diverged: *mut i32,
) -> PwshsStatus {
    guard(|| {
        let b = belief.as_mut().ok_or_else(|| null("belief"))?;
        let obs = StateVec::from_slice(slice(obs, dim, "obs")?).map_err(lib)?;
        b.belief = tracking::update(&b.belief, &obs, &b.cfg, seed).map_err(lib)?;
        if let Some(d) = diverged.as_mut() {
            *d = i32::from(b.belief.diverged());
        }
        Ok(())
    })
}

/// Copy the posterior mode probabilities into `out[0..len]`; `len` must equal
/// the model's mode count.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pwshs_belief_mode_weights(belief: *const PwshsBelief, out: *mut f64, len: usize) -> PwshsStatus {
    guard(|| {
        let b = belief.as_ref().ok_or_else(|| null("belief"))?;
        copy_out(&b.belief.mode_weights(), out, len)
    })
}

/// Copy the weighted particle mean into `out[0..len]`; `len` must equal the
/// state dimension.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pwshs_belief_mean(belief: *const PwshsBelief, out: *mut f64, len: usize) -> PwshsStatus {
    guard(|| {
        let b = belief.as_ref().ok_or_else(|| null("belief"))?;
        copy_out(b.belief.mean().as_slice(), out, len)
    })
}

unsafe fn copy_out(v: &[f64], out: *mut f64, len: usize) -> Result<(), (PwshsStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len != v.len() {
        return Err((
            PwshsStatus::InvalidArgument,
            format!("buffer length {len}, expected {}", v.len()),
        ));
    }
    std::slice::from_raw_parts_mut(out, len).copy_from_slice(v);
    Ok(())
}
