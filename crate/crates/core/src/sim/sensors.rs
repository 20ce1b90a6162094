//! Sensor synthesis from the true trunk and leg states.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{rotation_wf_to_bf, TrunkState};
use crate::measurements::SensorFrame;
use crate::model::{LegState, RobotParams};

/// Standard deviations of the additive Gaussian sensor noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorNoise {
    /// rad
    pub theta: f64,
    /// rad/s
    pub omega: f64,
    /// m/s²
    pub accel: f64,
    /// rad
    pub q: f64,
    /// rad/s
    pub q_dot: f64,
    /// N·m
    pub tau: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        SensorNoise {
            theta: 0.005,
            omega: 0.01,
            accel: 0.05,
            q: 0.001,
            q_dot: 0.01,
            tau: 0.2,
        }
    }
}

impl SensorNoise {
    pub fn zero() -> Self {
        SensorNoise {
            theta: 0.0,
            omega: 0.0,
            accel: 0.0,
            q: 0.0,
            q_dot: 0.0,
            tau: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.theta, self.omega, self.accel, self.q, self.q_dot, self.tau]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite())
    }
}

fn noisy<R: Rng>(rng: &mut R, v: Vector3<f64>, std: f64) -> Vector3<f64> {
    // draw unconditionally so the stream does not depend on which stds are zero
    let n = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    v + n * std
}

/// Noisy sensor channels for one tick.
///
/// `forces` are the body-frame contact forces acting on the trunk and
/// `legs` the true joint states. `extra_force` is any additional world-frame
/// force on the trunk that an accelerometer would register.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_sensors<R: Rng>(
    t: f64,
    state: &TrunkState,
    forces: &[Vector3<f64>; 4],
    contacts: &[bool; 4],
    legs: &[LegState; 4],
    extra_force: &Vector3<f64>,
    params: &RobotParams,
    noise: &SensorNoise,
    rng: &mut R,
) -> SensorFrame {
    let r = rotation_wf_to_bf(&state.theta);
    let contact_force: Vector3<f64> = (0..4).filter(|&i| contacts[i]).map(|i| forces[i]).sum();
    let accel = (contact_force + r * extra_force) / params.mass;
    let theta_bar = noisy(rng, state.theta, noise.theta);
    let omega_bar = noisy(rng, r * state.omega, noise.omega);
    let accel_bar = noisy(rng, accel, noise.accel);
    let legs = legs.map(|l| LegState {
        q: noisy(rng, l.q, noise.q),
        q_dot: noisy(rng, l.q_dot, noise.q_dot),
        tau: noisy(rng, l.tau, noise.tau),
    });
    SensorFrame {
        t,
        theta_bar,
        accel_bar,
        omega_bar,
        legs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LegIndex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn standing_legs(params: &RobotParams, forces: &[Vector3<f64>; 4]) -> [LegState; 4] {
        LegIndex::ALL.map(|leg| {
            let hip = params.legs.hip_offsets[leg.index()];
            let foot = Vector3::new(hip.x, hip.y + leg.side() * params.legs.l_hip, -0.3);
            let q = params.legs.inverse_kinematics(leg, &foot).unwrap();
            LegState {
                q,
                q_dot: Vector3::zeros(),
                tau: params
                    .legs
                    .joint_torques(leg, &q, &forces[leg.index()], params.force_convention),
            }
        })
    }

    #[test]
    fn exact_stand_round_trips_forces() {
        let p = RobotParams::default();
        let forces = [Vector3::new(0.0, 0.0, p.mass * 9.81 / 4.0); 4];
        let legs = standing_legs(&p, &forces);
        let state = TrunkState {
            position: Vector3::new(0.0, 0.0, 0.3),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frame = synthesize_sensors(
            0.0,
            &state,
            &forces,
            &[true; 4],
            &legs,
            &Vector3::zeros(),
            &p,
            &SensorNoise::zero(),
            &mut rng,
        );
        for leg in LegIndex::ALL {
            let l = frame.legs[leg.index()];
            let f = p
                .legs
                .estimate_contact_force(leg, &l.q, &l.tau, p.force_convention)
                .unwrap()
                .force;
            assert!((f - forces[leg.index()]).amax() < 1e-9);
        }
        assert!((frame.accel_bar - Vector3::new(0.0, 0.0, 9.81)).amax() < 1e-12);
    }

    #[test]
    fn swing_forces_do_not_reach_the_accelerometer() {
        let p = RobotParams::default();
        let forces = [Vector3::new(0.0, 0.0, 50.0), Vector3::new(1.0, 2.0, -5.0), Vector3::zeros(), Vector3::new(0.0, 0.0, 60.0)];
        let legs = standing_legs(&p, &forces);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frame = synthesize_sensors(
            0.0,
            &TrunkState::default(),
            &forces,
            &[true, false, false, true],
            &legs,
            &Vector3::zeros(),
            &p,
            &SensorNoise::zero(),
            &mut rng,
        );
        assert!((frame.accel_bar.z - 110.0 / p.mass).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_noise() {
        let p = RobotParams::default();
        let legs = [LegState::default(); 4];
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            synthesize_sensors(
                0.0,
                &TrunkState::default(),
                &[Vector3::zeros(); 4],
                &[false; 4],
                &legs,
                &Vector3::zeros(),
                &p,
                &SensorNoise::default(),
                &mut rng,
            )
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }
}
