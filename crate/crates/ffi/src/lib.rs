//! C interface to the contact-imm estimator.
//!
//! Every function returns a [`CimmStatus`]; outputs go through caller-owned
//! pointers. Estimators are opaque handles created by `cimm_estimator_new`
//! or `cimm_estimator_from_config` and released with `cimm_estimator_free`.
//! Panics are caught at the boundary and reported as `CIMM_STATUS_PANIC`.

use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::Vector3;

use contact_imm::estimator::{EstimatorConfig, ImmEstimator};
use contact_imm::harness::RunConfig;
use contact_imm::measurements::SensorFrame;
use contact_imm::model::{LegIndex, LegState, RobotParams};
use contact_imm::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CimmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    /// Kinematic singularity, singular innovation, non-finite values or a
    /// degenerate filter bank.
    Numerical = 5,
    Panic = 6,
}

/// Raw sensor channels of one tick. Leg arrays are ordered FL, FR, RL, RR,
/// three joints each.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct CimmSensorFrame {
    pub t: f64,
    pub theta: [f64; 3],
    pub accel: [f64; 3],
    pub omega: [f64; 3],
    pub q: [f64; 12],
    pub q_dot: [f64; 12],
    pub tau: [f64; 12],
}

/// Combined estimate: `state` is [Θ, d, ω, v], `contact` the per-leg contact
/// probabilities.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct CimmEstimate {
    pub t: f64,
    pub state: [f64; 12],
    pub contact: [f64; 4],
}

/// Opaque estimator handle.
pub struct CimmEstimator {
    inner: ImmEstimator,
    robot: RobotParams,
    last_error: CString,
}

fn status_of(e: &Error) -> CimmStatus {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::InvalidProbability { .. } => CimmStatus::Config,
        Error::Io { .. } => CimmStatus::Io,
        Error::LengthMismatch { .. } | Error::Unreachable { .. } => CimmStatus::InvalidArgument,
        _ => CimmStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> CimmStatus) -> CimmStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(CimmStatus::Panic)
}

fn leg_of(leg: u32) -> Option<LegIndex> {
    LegIndex::from_index(leg as usize)
}

impl CimmSensorFrame {
    fn to_frame(self) -> SensorFrame {
        let v = |a: &[f64]| Vector3::new(a[0], a[1], a[2]);
        let legs = std::array::from_fn(|i| LegState {
            q: v(&self.q[3 * i..]),
            q_dot: v(&self.q_dot[3 * i..]),
            tau: v(&self.tau[3 * i..]),
        });
        SensorFrame {
            t: self.t,
            theta_bar: v(&self.theta),
            accel_bar: v(&self.accel),
            omega_bar: v(&self.omega),
            legs,
        }
    }
}

fn create(robot: RobotParams, cfg: EstimatorConfig, out: *mut *mut CimmEstimator) -> CimmStatus {
    match ImmEstimator::new(robot.clone(), cfg) {
        Ok(inner) => {
            let handle = Box::new(CimmEstimator {
                inner,
                robot,
                last_error: CString::default(),
            });
            // SAFETY: caller checked `out` for null
            unsafe { *out = Box::into_raw(handle) };
            CimmStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Creates an estimator with the default robot and the trot mode set at
/// sample period `ts` seconds.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cimm_estimator_new(ts: f64, out: *mut *mut CimmEstimator) -> CimmStatus {
    guard(|| {
        if out.is_null() {
            return CimmStatus::NullPointer;
        }
        *out = ptr::null_mut();
        if !(ts > 0.0 && ts.is_finite()) {
            return CimmStatus::InvalidArgument;
        }
        create(RobotParams::default(), EstimatorConfig::trot(ts), out)
    })
}

/// Creates an estimator from the `[sim]`, `[robot]` and `[filter]` sections
/// of a scenario TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as in `cimm_estimator_new`.
#[no_mangle]
pub unsafe extern "C" fn cimm_estimator_from_config(path: *const c_char, out: *mut *mut CimmEstimator) -> CimmStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return CimmStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return CimmStatus::InvalidArgument;
        };
        let cfg = match RunConfig::load(Path::new(path)) {
            Ok(c) => c,
            Err(e) => return status_of(&e),
        };
        match cfg.estimator_config() {
            Ok(ecfg) => create(cfg.robot, ecfg, out),
            Err(e) => status_of(&e),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cimm_estimator_free(handle: *mut CimmEstimator) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Processes one tick of sensor data.
///
/// # Safety
/// `handle` must be a live handle; `frame` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cimm_estimator_step(
    handle: *mut CimmEstimator,
    frame: *const CimmSensorFrame,
    out: *mut CimmEstimate,
) -> CimmStatus {
    guard(|| {
        if handle.is_null() || frame.is_null() || out.is_null() {
            return CimmStatus::NullPointer;
        }
        let h = &mut *handle;
        match h.inner.step(&(*frame).to_frame()) {
            Ok(e) => {
                let mut state = [0.0; 12];
                state.copy_from_slice(e.state.as_slice());
                *out = CimmEstimate {
                    t: e.t,
                    state,
                    contact: e.contact,
                };
                h.last_error = CString::default();
                CimmStatus::Ok
            }
            Err(e) => {
                h.last_error = CString::new(e.to_string()).unwrap_or_default();
                status_of(&e)
            }
        }
    })
}

/// Number of contact modes in the bank.
///
/// # Safety
/// `handle` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cimm_estimator_mode_count(handle: *const CimmEstimator) -> usize {
    if handle.is_null() {
        return 0;
    }
    (*handle).inner.config().modes.len()
}

/// Copies the current mode probabilities into `out[0..len]`. Before the
/// first step the initial uniform distribution is reported.
///
/// # Safety
/// `handle` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cimm_estimator_mode_probabilities(
    handle: *const CimmEstimator,
    out: *mut f64,
    len: usize,
) -> CimmStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            return CimmStatus::NullPointer;
        }
        let h = &*handle;
        let m = h.inner.config().modes.len();
        if len < m {
            return CimmStatus::InvalidArgument;
        }
        let dst = std::slice::from_raw_parts_mut(out, m);
        match h.inner.bank() {
            Some(b) => dst.copy_from_slice(b.mode_probabilities()),
            None => dst.fill(1.0 / m as f64),
        }
        CimmStatus::Ok
    })
}

/// Detail of the last failed step, or an empty string. Valid until the next
/// call on the handle.
///
/// # Safety
/// `handle` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cimm_estimator_last_error(handle: *const CimmEstimator) -> *const c_char {
    if handle.is_null() {
        return c"".as_ptr();
    }
    (*handle).last_error.as_ptr()
}

/// Foot position in the body frame for joint angles `q[3]`, with the
/// handle's robot, or the default robot when `handle` is null.
///
/// # Safety
/// `q` must point to 3 doubles and `out` to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cimm_forward_kinematics(
    handle: *const CimmEstimator,
    leg: u32,
    q: *const f64,
    out: *mut f64,
) -> CimmStatus {
    guard(|| {
        if q.is_null() || out.is_null() {
            return CimmStatus::NullPointer;
        }
        let Some(leg) = leg_of(leg) else {
            return CimmStatus::InvalidArgument;
        };
        let robot = robot_of(handle);
        let q = Vector3::from_column_slice(std::slice::from_raw_parts(q, 3));
        let p = robot.legs.forward_kinematics(leg, &q);
        std::slice::from_raw_parts_mut(out, 3).copy_from_slice(p.as_slice());
        CimmStatus::Ok
    })
}

/// Leg Jacobian `∂p/∂q`, written row-major into `out[9]`.
///
/// # Safety
/// As `cimm_forward_kinematics`, with `out` pointing to 9 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cimm_leg_jacobian(
    handle: *const CimmEstimator,
    leg: u32,
    q: *const f64,
    out: *mut f64,
) -> CimmStatus {
    guard(|| {
        if q.is_null() || out.is_null() {
            return CimmStatus::NullPointer;
        }
        let Some(leg) = leg_of(leg) else {
            return CimmStatus::InvalidArgument;
        };
        let robot = robot_of(handle);
        let q = Vector3::from_column_slice(std::slice::from_raw_parts(q, 3));
        let j = robot.legs.jacobian(leg, &q);
        let dst = std::slice::from_raw_parts_mut(out, 9);
        for r in 0..3 {
            for c in 0..3 {
                dst[3 * r + c] = j[(r, c)];
            }
        }
        CimmStatus::Ok
    })
}

/// Body-frame ground reaction force recovered from joint angles and torques.
///
/// # Safety
/// `q` and `tau` must point to 3 doubles and `out` to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cimm_contact_force(
    handle: *const CimmEstimator,
    leg: u32,
    q: *const f64,
    tau: *const f64,
    out: *mut f64,
) -> CimmStatus {
    guard(|| {
        if q.is_null() || tau.is_null() || out.is_null() {
            return CimmStatus::NullPointer;
        }
        let Some(leg) = leg_of(leg) else {
            return CimmStatus::InvalidArgument;
        };
        let robot = robot_of(handle);
        let q = Vector3::from_column_slice(std::slice::from_raw_parts(q, 3));
        let tau = Vector3::from_column_slice(std::slice::from_raw_parts(tau, 3));
        match robot.legs.estimate_contact_force(leg, &q, &tau, robot.force_convention) {
            Ok(f) => {
                std::slice::from_raw_parts_mut(out, 3).copy_from_slice(f.force.as_slice());
                CimmStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

unsafe fn robot_of(handle: *const CimmEstimator) -> RobotParams {
    if handle.is_null() {
        RobotParams::default()
    } else {
        (*handle).robot.clone()
    }
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn cimm_status_message(status: CimmStatus) -> *const c_char {
    let s: &CStr = match status {
        CimmStatus::Ok => c"ok",
        CimmStatus::NullPointer => c"null pointer argument",
        CimmStatus::InvalidArgument => c"invalid argument",
        CimmStatus::Config => c"invalid configuration",
        CimmStatus::Io => c"i/o error",
        CimmStatus::Numerical => c"numerical failure",
        CimmStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}
