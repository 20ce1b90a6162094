//! Ground-truth trunk integration and stance-force synthesis.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};

use crate::dynamics::{
    euler_rate_matrix, rotation_bf_to_wf, rotation_wf_to_bf, wrench_map, StateVector, TrunkState,
    OMEGA, POSITION, THETA, VELOCITY,
};
use crate::error::{Error, Result};
use crate::model::RobotParams;

/// Extra world-frame wrench acting on the trunk, outside the contact forces.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExternalWrench {
    /// Moment about the CoM, body frame.
    pub moment: Vector3<f64>,
    /// Force through the CoM, world frame.
    pub force: Vector3<f64>,
}

/// Contact forces on the trunk plus whatever part of the commanded moment
/// they could not realize.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StanceForces {
    /// Body-frame forces, FL, FR, RL, RR.
    pub forces: [Vector3<f64>; 4],
    /// Commanded body moment minus the moment produced by `forces`.
    pub moment_residual: Vector3<f64>,
}

const FORCE_ROW_WEIGHT: f64 = 100.0;
const REGULARIZATION: f64 = 1e-6;

/// Distributes a commanded trunk acceleration over the contact feet.
///
/// `desired_accel` is `[α (world); a (world)]`. The body wrench that realizes
/// it against gravity is split over contact legs by weighted least squares
/// with the net force weighted above the moment; normal (body z) components
/// are then clamped at zero.
pub fn synthesize_stance_forces(
    state: &TrunkState,
    contacts: &[bool; 4],
    foot_positions: &[Vector3<f64>; 4],
    params: &RobotParams,
    desired_accel: &Vector6<f64>,
) -> StanceForces {
    let r_wb = rotation_wf_to_bf(&state.theta);
    let alpha = desired_accel.fixed_rows::<3>(0).into_owned();
    let accel = desired_accel.fixed_rows::<3>(3).into_owned();
    let moment = params.trunk_inertia * (r_wb * alpha);
    let force = r_wb * (accel - params.gravity) * params.mass;
    let mut target = Vector6::zeros();
    target.fixed_rows_mut::<3>(0).copy_from(&moment);
    target.fixed_rows_mut::<3>(3).copy_from(&force);

    let legs: Vec<usize> = (0..4).filter(|&i| contacts[i]).collect();
    let mut forces = [Vector3::zeros(); 4];
    if legs.is_empty() {
        return StanceForces {
            forces,
            moment_residual: moment,
        };
    }
    let full = wrench_map(foot_positions, contacts);
    let n = 3 * legs.len();
    let mut a = DMatrix::<f64>::zeros(6, n);
    for (k, &leg) in legs.iter().enumerate() {
        a.view_mut((0, 3 * k), (6, 3))
            .copy_from(&full.fixed_view::<6, 3>(0, 3 * leg));
    }
    let mut w = DVector::from_element(6, 1.0);
    w.rows_mut(3, 3).fill(FORCE_ROW_WEIGHT);
    let aw = DMatrix::from_diagonal(&w) * &a;
    let b = DVector::from_iterator(6, target.iter().zip(w.iter()).map(|(t, w)| t * w));
    let normal = aw.transpose() * &aw + DMatrix::identity(n, n) * REGULARIZATION;
    let rhs = aw.transpose() * b;
    let sol = normal
        .cholesky()
        .expect("regularized normal equations are positive definite")
        .solve(&rhs);
    for (k, &leg) in legs.iter().enumerate() {
        let mut f = Vector3::new(sol[3 * k], sol[3 * k + 1], sol[3 * k + 2]);
        f.z = f.z.max(0.0);
        forces[leg] = f;
    }
    let produced: Vector3<f64> = (0..4)
        .filter(|&i| contacts[i])
        .map(|i| foot_positions[i].cross(&forces[i]))
        .sum();
    StanceForces {
        forces,
        moment_residual: moment - produced,
    }
}

/// Continuous-time derivative of the switched trunk model under body-frame
/// contact forces applied at world-fixed feet.
fn derivative(
    x: &StateVector,
    forces: &[Vector3<f64>; 4],
    contacts: &[bool; 4],
    feet_world: &[Vector3<f64>; 4],
    params: &RobotParams,
    external: &ExternalWrench,
    exact_euler_rates: bool,
) -> StateVector {
    let s = TrunkState::from_vector(x);
    let r = rotation_bf_to_wf(&s.theta);
    let mut moment = external.moment;
    let mut force = Vector3::zeros();
    for i in 0..4 {
        if contacts[i] {
            let p_bf = r.transpose() * (feet_world[i] - s.position);
            moment += p_bf.cross(&forces[i]);
            force += forces[i];
        }
    }
    let theta_dot = if exact_euler_rates {
        euler_rate_matrix(&s.theta)
            .try_inverse()
            .unwrap_or_else(Matrix3::zeros)
            * s.omega
    } else {
        r.transpose() * s.omega
    };
    let mut dx = StateVector::zeros();
    dx.fixed_rows_mut::<3>(THETA).copy_from(&theta_dot);
    dx.fixed_rows_mut::<3>(POSITION).copy_from(&s.velocity);
    dx.fixed_rows_mut::<3>(OMEGA)
        .copy_from(&(r * params.inertia_inverse() * moment));
    dx.fixed_rows_mut::<3>(VELOCITY)
        .copy_from(&(params.gravity + (r * force + external.force) / params.mass));
    dx
}

#[derive(Clone, Copy, Debug)]
pub struct TruthInput<'a> {
    pub forces: &'a [Vector3<f64>; 4],
    pub contacts: &'a [bool; 4],
    pub feet_world: &'a [Vector3<f64>; 4],
    pub external: ExternalWrench,
    pub exact_euler_rates: bool,
}

/// One RK4 step of length `ts` with forces held constant in the body frame.
pub fn step_truth(state: &TrunkState, input: &TruthInput<'_>, params: &RobotParams, ts: f64) -> Result<TrunkState> {
    let f = |x: &StateVector| {
        derivative(
            x,
            input.forces,
            input.contacts,
            input.feet_world,
            params,
            &input.external,
            input.exact_euler_rates,
        )
    };
    let x = state.to_vector();
    let k1 = f(&x);
    let k2 = f(&(x + k1 * (ts / 2.0)));
    let k3 = f(&(x + k2 * (ts / 2.0)));
    let k4 = f(&(x + k3 * ts));
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (ts / 6.0);
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteState("simulated trunk state"));
    }
    Ok(TrunkState::from_vector(&next))
}

/// Same vector field, forward Euler; used to check the integrator.
pub fn step_truth_euler(state: &TrunkState, input: &TruthInput<'_>, params: &RobotParams, ts: f64) -> TrunkState {
    let x = state.to_vector();
    let dx = derivative(
        &x,
        input.forces,
        input.contacts,
        input.feet_world,
        params,
        &input.external,
        input.exact_euler_rates,
    );
    TrunkState::from_vector(&(x + dx * ts))
}

/// PD gains of the trunk controller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerGains {
    pub kp_pos: f64,
    pub kd_pos: f64,
    pub kp_att: f64,
    pub kd_att: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            kp_pos: 150.0,
            kd_pos: 25.0,
            kp_att: 300.0,
            kd_att: 35.0,
        }
    }
}

/// Reference trunk motion: straight line along world x at constant height
/// with an optional vertical oscillation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reference {
    pub speed: f64,
    pub height: f64,
    pub bounce_amplitude: f64,
    /// rad/s
    pub bounce_rate: f64,
    /// rad
    pub bounce_phase: f64,
}

impl Reference {
    pub fn position(&self, t: f64) -> Vector3<f64> {
        Vector3::new(
            self.speed * t,
            0.0,
            self.height + self.bounce_amplitude * (self.bounce_rate * t + self.bounce_phase).sin(),
        )
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        Vector3::new(
            self.speed,
            0.0,
            self.bounce_amplitude * self.bounce_rate * (self.bounce_rate * t + self.bounce_phase).cos(),
        )
    }

    pub fn acceleration(&self, t: f64) -> Vector3<f64> {
        Vector3::new(
            0.0,
            0.0,
            -self.bounce_amplitude * self.bounce_rate.powi(2) * (self.bounce_rate * t + self.bounce_phase).sin(),
        )
    }
}

/// Desired `[α; a]` (world) tracking `reference` with level attitude.
pub fn desired_acceleration(state: &TrunkState, reference: &Reference, gains: &ControllerGains, t: f64) -> Vector6<f64> {
    let a = reference.acceleration(t)
        + (reference.position(t) - state.position) * gains.kp_pos
        + (reference.velocity(t) - state.velocity) * gains.kd_pos;
    let alpha = -state.theta * gains.kp_att - state.omega * gains.kd_att;
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&alpha);
    out.fixed_rows_mut::<3>(3).copy_from(&a);
    out
}

/// Body-frame position of each world-fixed foot.
pub fn feet_in_body(state: &TrunkState, feet_world: &[Vector3<f64>; 4]) -> [Vector3<f64>; 4] {
    let r = rotation_wf_to_bf(&state.theta);
    feet_world.map(|f| r * (f - state.position))
}
