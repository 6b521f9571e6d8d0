//! C interface to the simulation engine.
//!
//! Every function returns an [`SsStatus`]; on failure a description is
//! available from [`ss_last_error`] on the same thread. Worlds are opaque
//! handles created by [`ss_world_new`] and released by [`ss_world_free`].
//! No function unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use shadowsync::scenario::ScenarioConfig;
use shadowsync::sync::SyncError;
use shadowsync::{Error, ParticleId, SyncStrategy, World};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    /// Malformed UTF-8, unknown key or out-of-range value.
    InvalidArgument = 2,
    /// Next-neighbor sync with a radius not below the smallest subdomain edge.
    AssumptionViolated = 3,
    /// Any other engine failure, e.g. the displacement guard.
    Simulation = 4,
    BufferTooSmall = 5,
    NotFound = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsStrategy {
    NextNeighbor = 0,
    ShadowOwner = 1,
}

/// Master state of one particle.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SsParticle {
    pub id: u64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
    pub radius: f64,
    pub mass: f64,
}

/// Opaque simulation handle.
pub struct SsWorld {
    world: World,
    dt: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: SsStatus, msg: impl Into<String>) -> SsStatus {
    set_error(msg);
    status
}

fn engine_error(e: Error) -> SsStatus {
    let status = match &e {
        Error::Sync(SyncError::AssumptionViolated { .. }) => SsStatus::AssumptionViolated,
        Error::Scenario(_) => SsStatus::InvalidArgument,
        _ => SsStatus::Simulation,
    };
    fail(status, e.to_string())
}

/// Run `f`, turning a panic into `SsStatus::Panic`.
fn guard(f: impl FnOnce() -> SsStatus) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            fail(SsStatus::Panic, format!("panic: {msg}"))
        }
    }
}

/// Borrow the world behind a handle.
///
/// # Safety
/// `w` must be null or a live handle from [`ss_world_new`].
unsafe fn world_mut<'a>(w: *mut SsWorld) -> Result<&'a mut SsWorld, SsStatus> {
    // SAFETY: forwarded from the caller.
    unsafe { w.as_mut() }.ok_or_else(|| fail(SsStatus::NullPointer, "world handle is null"))
}

/// Message describing the most recent failure on this thread, or an empty
/// string if none occurred. Successful calls leave it unchanged. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a world from configuration text (`key = value` lines) and run
/// its startup synchronizations.
///
/// # Safety
/// `config` must be null or a NUL-terminated string; `out` must be null or
/// writable. On success `*out` receives a handle owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn ss_world_new(config: *const c_char, out: *mut *mut SsWorld) -> SsStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            return fail(SsStatus::NullPointer, "config and out must be non-null");
        }
        // SAFETY: checked non-null; the caller promises NUL termination.
        let text = match unsafe { CStr::from_ptr(config) }.to_str() {
            Ok(t) => t,
            Err(e) => return fail(SsStatus::InvalidArgument, format!("config is not UTF-8: {e}")),
        };
        let cfg = match ScenarioConfig::parse(text) {
            Ok(c) => c,
            Err(e) => return fail(SsStatus::InvalidArgument, e.to_string()),
        };
        let mut world = match cfg.build() {
            Ok(w) => w,
            Err(e) => return engine_error(e),
        };
        if let Err(e) = world.startup_syncs() {
            return engine_error(e);
        }
        let handle = Box::into_raw(Box::new(SsWorld { world, dt: cfg.dt }));
        // SAFETY: checked non-null above.
        unsafe { *out = handle };
        SsStatus::Ok
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `w` must be null or a handle from [`ss_world_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_world_free(w: *mut SsWorld) {
    if !w.is_null() {
        // SAFETY: the caller hands back ownership of a live handle.
        drop(unsafe { Box::from_raw(w) });
    }
}

/// Advance `steps` time steps with the configured `dt`.
///
/// # Safety
/// `w` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_world_step(w: *mut SsWorld, steps: u64) -> SsStatus {
    guard(|| {
        // SAFETY: forwarded from the caller.
        let w = match unsafe { world_mut(w) } {
            Ok(w) => w,
            Err(s) => return s,
        };
        for _ in 0..steps {
            if let Err(e) = w.world.step(w.dt) {
                return engine_error(e);
            }
        }
        SsStatus::Ok
    })
}

/// One synchronization call without a time step.
///
/// # Safety
/// `w` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_world_sync(w: *mut SsWorld) -> SsStatus {
    guard(|| {
        // SAFETY: forwarded from the caller.
        let w = match unsafe { world_mut(w) } {
            Ok(w) => w,
            Err(s) => return s,
        };
        match w.world.sync() {
            Ok(_) => SsStatus::Ok,
            Err(e) => engine_error(e),
        }
    })
}

/// Switch the synchronization strategy of a quiesced world.
///
/// # Safety
/// `w` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_world_set_strategy(w: *mut SsWorld, strategy: SsStrategy) -> SsStatus {
    guard(|| {
        // SAFETY: forwarded from the caller.
        let w = match unsafe { world_mut(w) } {
            Ok(w) => w,
            Err(s) => return s,
        };
        w.world.set_strategy(match strategy {
            SsStrategy::NextNeighbor => SyncStrategy::NextNeighbor,
            SsStrategy::ShadowOwner => SyncStrategy::ShadowOwner,
        });
        SsStatus::Ok
    })
}

/// Counters: total masters, total shadows, ranks and steps taken.
///
/// # Safety
/// `w` must be null or a live handle; each output pointer must be null
/// (skipped) or writable.
#[no_mangle]
pub unsafe extern "C" fn ss_world_counts(
    w: *mut SsWorld,
    masters: *mut u64,
    shadows: *mut u64,
    ranks: *mut u64,
    steps: *mut u64,
) -> SsStatus {
    guard(|| {
        // SAFETY: forwarded from the caller.
        let w = match unsafe { world_mut(w) } {
            Ok(w) => &w.world,
            Err(s) => return s,
        };
        let values = [
            (masters, w.master_count() as u64),
            (shadows, w.shadow_count() as u64),
            (ranks, w.partition().rank_count() as u64),
            (steps, w.step_count()),
        ];
        for (p, v) in values {
            if !p.is_null() {
                // SAFETY: the caller promises writable or null.
                unsafe { *p = v };
            }
        }
        SsStatus::Ok
    })
}

/// Master state of particle `id`.
///
/// # Safety
/// `w` must be null or a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ss_world_particle(w: *mut SsWorld, id: u64, out: *mut SsParticle) -> SsStatus {
    guard(|| {
        // SAFETY: forwarded from the caller.
        let w = match unsafe { world_mut(w) } {
            Ok(w) => &w.world,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(SsStatus::NullPointer, "out is null");
        }
        let found = w.ranks().iter().find_map(|rs| rs.store.get(ParticleId(id)).filter(|p| p.is_master()).map(|p| p.state));
        let Some(s) = found else {
            return fail(SsStatus::NotFound, format!("no particle with id {id}"));
        };
        let p = SsParticle {
            id,
            position: s.position.to_array(),
            velocity: s.velocity.to_array(),
            angular_velocity: s.angular_velocity.to_array(),
            radius: s.radius,
            mass: s.mass(),
        };
        // SAFETY: checked non-null; the caller promises writable.
        unsafe { *out = p };
        SsStatus::Ok
    })
}

/// Copy the snapshot text (NUL-terminated) into `buf`. `*len` receives the
/// size needed including the terminator; pass a null `buf` to query it.
/// Returns `BufferTooSmall` without writing when `cap` is insufficient.
///
/// # Safety
/// `w` must be null or a live handle; `buf` must be null or valid for `cap`
/// bytes; `len` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ss_world_snapshot(w: *mut SsWorld, buf: *mut c_char, cap: usize, len: *mut usize) -> SsStatus {
    guard(|| {
        // SAFETY: forwarded from the caller.
        let w = match unsafe { world_mut(w) } {
            Ok(w) => &w.world,
            Err(s) => return s,
        };
        let text = w.snapshot().to_text();
        let needed = text.len() + 1;
        if !len.is_null() {
            // SAFETY: the caller promises writable or null.
            unsafe { *len = needed };
        }
        if buf.is_null() {
            return if len.is_null() { fail(SsStatus::NullPointer, "buf and len are both null") } else { SsStatus::Ok };
        }
        if cap < needed {
            return fail(SsStatus::BufferTooSmall, format!("snapshot needs {needed} bytes, buffer has {cap}"));
        }
        // SAFETY: `buf` holds at least `needed` bytes.
        unsafe {
            ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
            *buf.add(text.len()) = 0;
        }
        SsStatus::Ok
    })
}

/// Number of cross-rank invariant violations (0 for a consistent,
/// quiesced world). Details go to [`ss_last_error`].
///
/// # Safety
/// `w` must be null or a live handle; `problems` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ss_world_check(w: *mut SsWorld, problems: *mut u64) -> SsStatus {
    guard(|| {
        // SAFETY: forwarded from the caller.
        let w = match unsafe { world_mut(w) } {
            Ok(w) => &w.world,
            Err(s) => return s,
        };
        if problems.is_null() {
            return fail(SsStatus::NullPointer, "problems is null");
        }
        let found = w.check_consistency();
        // SAFETY: checked non-null.
        unsafe { *problems = found.len() as u64 };
        if !found.is_empty() {
            set_error(found.join("\n"));
        }
        SsStatus::Ok
    })
}
