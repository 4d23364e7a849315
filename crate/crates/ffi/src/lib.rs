//! C ABI over the sphlat core. Objects cross the boundary as opaque handles
//! created by `*_new`/`*_read` and released by the matching `*_free`.
//! Every fallible call returns a [`SphlatStatus`]; on failure the message is
//! available from [`sphlat_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sphlat::directional::{PowerSphericalParams, UnitDirection, VmfParams};
use sphlat::geometry::{project_to_sphere, SphericalToken, DEFAULT_EPS};
use sphlat::rng::{stream, Rng};
use sphlat::tensor::Checkpoint;
use sphlat::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SphlatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Format = 4,
    Io = 5,
    NotFound = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: SphlatStatus, msg: impl Into<String>) -> SphlatStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> SphlatStatus {
    match e {
        Error::Domain { .. } => SphlatStatus::Domain,
        Error::Format(_) => SphlatStatus::Format,
        Error::Io { .. } => SphlatStatus::Io,
        _ => SphlatStatus::InvalidArgument,
    }
}

fn guarded(f: impl FnOnce() -> Result<(), SphlatStatus>) -> SphlatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SphlatStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(SphlatStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: sphlat::Result<T>) -> Result<T, SphlatStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn slice<'a>(p: *const f64, n: usize) -> Result<&'a [f64], SphlatStatus> {
    if p.is_null() {
        return Err(fail(SphlatStatus::NullPointer, "null input buffer"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize) -> Result<&'a mut [f64], SphlatStatus> {
    if p.is_null() {
        return Err(fail(SphlatStatus::NullPointer, "null output buffer"));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, SphlatStatus> {
    p.as_ref().ok_or_else(|| fail(SphlatStatus::NullPointer, "null handle"))
}

unsafe fn handle_mut<'a, T>(p: *mut T) -> Result<&'a mut T, SphlatStatus> {
    p.as_mut().ok_or_else(|| fail(SphlatStatus::NullPointer, "null handle"))
}

unsafe fn out<T>(p: *mut T, v: T) -> Result<(), SphlatStatus> {
    if p.is_null() {
        return Err(fail(SphlatStatus::NullPointer, "null output pointer"));
    }
    p.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sphlat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Opaque seeded random stream.
pub struct SphlatRng(Rng);

/// Opaque Power Spherical distribution.
pub struct SphlatPowerSpherical(PowerSphericalParams);

/// Opaque in-memory checkpoint.
pub struct SphlatCheckpoint(Checkpoint);

/// Stream `index` of `seed`; streams of one seed are independent.
#[no_mangle]
pub extern "C" fn sphlat_rng_new(seed: u64, index: u64) -> *mut SphlatRng {
    Box::into_raw(Box::new(SphlatRng(stream(seed, index))))
}

/// # Safety
/// `rng` must come from [`sphlat_rng_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sphlat_rng_free(rng: *mut SphlatRng) {
    if !rng.is_null() {
        drop(Box::from_raw(rng));
    }
}

/// # Safety
/// `mu` must point to `dim` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sphlat_ps_new(mu: *const f64, dim: usize, kappa: f64, out_handle: *mut *mut SphlatPowerSpherical) -> SphlatStatus {
    guarded(|| {
        let mu = lift(UnitDirection::new(slice(mu, dim)?.to_vec()))?;
        let p = lift(PowerSphericalParams::new(mu, kappa))?;
        out(out_handle, Box::into_raw(Box::new(SphlatPowerSpherical(p))))
    })
}

/// # Safety
/// `ps` must come from [`sphlat_ps_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sphlat_ps_free(ps: *mut SphlatPowerSpherical) {
    if !ps.is_null() {
        drop(Box::from_raw(ps));
    }
}

/// # Safety
/// `u` must point to `dim` doubles with unit norm.
#[no_mangle]
pub unsafe extern "C" fn sphlat_ps_log_density(ps: *const SphlatPowerSpherical, u: *const f64, dim: usize, out_value: *mut f64) -> SphlatStatus {
    guarded(|| {
        let ps = handle(ps)?;
        if dim != ps.0.dim() {
            return Err(fail(SphlatStatus::InvalidArgument, format!("dimension {dim} != {}", ps.0.dim())));
        }
        let u = lift(UnitDirection::from_unit(slice(u, dim)?.to_vec()))?;
        out(out_value, ps.0.log_density(&u))
    })
}

/// Draw one direction into `out_u` (`dim` doubles).
///
/// # Safety
/// Handles must be live; `out_u` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn sphlat_ps_sample(ps: *const SphlatPowerSpherical, rng: *mut SphlatRng, out_u: *mut f64, dim: usize) -> SphlatStatus {
    guarded(|| {
        let ps = handle(ps)?;
        let rng = handle_mut(rng)?;
        if dim != ps.0.dim() {
            return Err(fail(SphlatStatus::BufferTooSmall, format!("buffer of {dim} for dimension {}", ps.0.dim())));
        }
        slice_mut(out_u, dim)?.copy_from_slice(ps.0.sample(&mut rng.0).as_slice());
        Ok(())
    })
}

/// `E[μᵀu]`.
///
/// # Safety
/// `ps` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn sphlat_ps_mean_cosine(ps: *const SphlatPowerSpherical, out_value: *mut f64) -> SphlatStatus {
    guarded(|| out(out_value, handle(ps)?.0.mean_cosine()))
}

/// # Safety
/// `mu` and `u` must point to `dim` doubles; `u` must have unit norm.
#[no_mangle]
pub unsafe extern "C" fn sphlat_vmf_log_density(mu: *const f64, u: *const f64, dim: usize, kappa: f64, out_value: *mut f64) -> SphlatStatus {
    guarded(|| {
        let mu = lift(UnitDirection::new(slice(mu, dim)?.to_vec()))?;
        let u = lift(UnitDirection::from_unit(slice(u, dim)?.to_vec()))?;
        let p = lift(VmfParams::new(mu, kappa))?;
        out(out_value, p.log_density(&u))
    })
}

/// `R·z/max(‖z‖, ε)` into `out_z`; `guard_fired` is set when `‖z‖ < ε`.
///
/// # Safety
/// `z` and `out_z` must hold `dim` doubles; `guard_fired` may be null.
#[no_mangle]
pub unsafe extern "C" fn sphlat_project_to_sphere(z: *const f64, dim: usize, radius: f64, out_z: *mut f64, guard_fired: *mut bool) -> SphlatStatus {
    guarded(|| {
        if !(radius > 0.0 && radius.is_finite()) || dim == 0 {
            return Err(fail(SphlatStatus::InvalidArgument, format!("radius {radius}, dimension {dim}")));
        }
        let t = project_to_sphere(slice(z, dim)?, radius, DEFAULT_EPS);
        if !guard_fired.is_null() {
            guard_fired.write(t.guard_fired());
        }
        slice_mut(out_z, dim)?.copy_from_slice(t.as_slice());
        Ok(())
    })
}

/// `(I − z̄z̄ᵀ/R²) v` for on-sphere `z_bar`.
///
/// # Safety
/// `z_bar`, `v` and `out_v` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn sphlat_tangent_project(z_bar: *const f64, v: *const f64, dim: usize, radius: f64, out_v: *mut f64) -> SphlatStatus {
    guarded(|| {
        let zb = lift(SphericalToken::on_sphere(slice(z_bar, dim)?.to_vec(), radius))?;
        let p = lift(sphlat::geometry::tangent_projector(&zb))?;
        slice_mut(out_v, dim)?.copy_from_slice(&p.apply(slice(v, dim)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn sphlat_checkpoint_read(path: *const c_char, out_handle: *mut *mut SphlatCheckpoint) -> SphlatStatus {
    guarded(|| {
        if path.is_null() {
            return Err(fail(SphlatStatus::NullPointer, "null path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| fail(SphlatStatus::InvalidArgument, "path is not UTF-8"))?;
        let ck = lift(Checkpoint::read(std::path::Path::new(path)))?;
        out(out_handle, Box::into_raw(Box::new(SphlatCheckpoint(ck))))
    })
}

/// # Safety
/// `bytes` must point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn sphlat_checkpoint_from_bytes(bytes: *const u8, len: usize, out_handle: *mut *mut SphlatCheckpoint) -> SphlatStatus {
    guarded(|| {
        if bytes.is_null() {
            return Err(fail(SphlatStatus::NullPointer, "null buffer"));
        }
        let ck = lift(Checkpoint::from_bytes(std::slice::from_raw_parts(bytes, len)))?;
        out(out_handle, Box::into_raw(Box::new(SphlatCheckpoint(ck))))
    })
}

/// # Safety
/// `ck` must come from a checkpoint constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sphlat_checkpoint_free(ck: *mut SphlatCheckpoint) {
    if !ck.is_null() {
        drop(Box::from_raw(ck));
    }
}

/// # Safety
/// `ck` must be live.
#[no_mangle]
pub unsafe extern "C" fn sphlat_checkpoint_len(ck: *const SphlatCheckpoint, out_len: *mut usize) -> SphlatStatus {
    guarded(|| out(out_len, handle(ck)?.0.entries.len()))
}

/// Copy tensor `name` into `out_data`. `out_len` receives the element count
/// even when the buffer is too small.
///
/// # Safety
/// `name` must be NUL-terminated; `out_data` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn sphlat_checkpoint_tensor(
    ck: *const SphlatCheckpoint,
    name: *const c_char,
    out_data: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> SphlatStatus {
    guarded(|| {
        let ck = handle(ck)?;
        if name.is_null() {
            return Err(fail(SphlatStatus::NullPointer, "null name"));
        }
        let name = CStr::from_ptr(name).to_string_lossy();
        let t = ck.0.get(&name).ok_or_else(|| fail(SphlatStatus::NotFound, format!("no tensor `{name}`")))?;
        out(out_len, t.len())?;
        if cap < t.len() {
            return Err(fail(SphlatStatus::BufferTooSmall, format!("tensor `{name}` has {} elements, buffer {cap}", t.len())));
        }
        slice_mut(out_data, t.len())?.copy_from_slice(t.data());
        Ok(())
    })
}
