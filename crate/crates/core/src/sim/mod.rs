//! Deterministic ground-truth and sensor generator.
//!
//! The trunk follows the same switched vector field the estimator models.
//! Feet are pinned in the world while in stance and follow a half-sine lift
//! between footholds while swinging. Forces at tick `n` are computed from the
//! state at `n − 1`, held over the interval, and the sensors at `n` read the
//! state reached at its end.

pub mod gait;
pub mod sensors;
pub mod truth;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{euler_rate_matrix, rotation_bf_to_wf, rotation_wf_to_bf, TrunkState};
use crate::error::{Error, Result};
use crate::measurements::SensorFrame;
use crate::model::{LegIndex, LegState, RobotParams};

pub use gait::{EarlyContact, GaitKind, GaitSchedule, Phase};
pub use sensors::{synthesize_sensors, SensorNoise};
pub use truth::{
    desired_acceleration, feet_in_body, step_truth, synthesize_stance_forces, ControllerGains, ExternalWrench,
    Reference, StanceForces, TruthInput,
};

/// An early touchdown, in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyContactEvent {
    pub leg: LegIndex,
    /// The first touchdown at or after this time is moved.
    pub time: f64,
    pub advance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// s
    pub duration: f64,
    /// Hz
    pub rate: f64,
    pub seed: u64,
    pub gait: GaitKind,
    /// Gait cycle length, s.
    pub period: f64,
    pub duty: f64,
    /// Forward speed, m/s.
    pub speed: f64,
    /// Nominal CoM height above ground, m.
    pub height: f64,
    /// Vertical oscillation amplitude, m, at twice the gait frequency. The
    /// trunk is lowest at mid-stance.
    pub bounce: f64,
    /// Peak foot lift during swing, m.
    pub swing_height: f64,
    /// Effective distal mass whose inertial and gravity load shows up in the
    /// joint torques of a swinging leg, kg.
    pub swing_leg_mass: f64,
    pub noise: SensorNoise,
    pub events: Vec<EarlyContactEvent>,
    /// How far the commanded contact schedule leads the true gait, s.
    pub schedule_offset: f64,
    /// Integrate the exact Euler-angle kinematics instead of the estimator's
    /// small-angle mapping.
    pub exact_euler_rates: bool,
    /// Standard deviation of an unmodeled random force on the trunk, N. The
    /// accompanying moment has a tenth of this in N·m.
    pub model_mismatch: f64,
    pub gains: ControllerGains,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration: 10.0,
            rate: 200.0,
            seed: 0,
            gait: GaitKind::Trot,
            period: 0.3,
            duty: 0.5,
            speed: 1.0,
            height: 0.3,
            bounce: 0.003,
            swing_height: 0.05,
            swing_leg_mass: 0.6,
            noise: SensorNoise::default(),
            events: Vec::new(),
            schedule_offset: 0.02,
            exact_euler_rates: false,
            model_mismatch: 0.0,
            gains: ControllerGains::default(),
        }
    }
}

impl SimConfig {
    pub fn ts(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn ticks(&self) -> usize {
        (self.duration * self.rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rate", self.rate),
            ("period", self.period),
            ("height", self.height),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::config(format!("duration must be >= 0, got {}", self.duration)));
        }
        let non_negative = [
            ("bounce", self.bounce),
            ("swing_height", self.swing_height),
            ("swing_leg_mass", self.swing_leg_mass),
            ("schedule_offset", self.schedule_offset),
            ("model_mismatch", self.model_mismatch),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !self.speed.is_finite() {
            return Err(Error::config("speed must be finite"));
        }
        if self.gait == GaitKind::Stand && self.speed != 0.0 {
            return Err(Error::config("the stand gait requires speed = 0"));
        }
        if !self.noise.is_valid() {
            return Err(Error::config("sensor noise deviations must be >= 0"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<GaitSchedule> {
        let ts = self.ts();
        let mut g = GaitSchedule::new(self.gait, self.period, self.duty, ts)?;
        for e in &self.events {
            g.add_early_contact(EarlyContact {
                leg: e.leg,
                tick: (e.time / ts).round() as i64,
                advance: (e.advance / ts).round() as i64,
            })?;
        }
        Ok(g)
    }

    pub fn reference(&self, gait: &GaitSchedule) -> Reference {
        let rate = 2.0 * std::f64::consts::TAU / self.period;
        let t_mid = gait.stance_midpoint(LegIndex::FL, 0) * self.ts();
        Reference {
            speed: self.speed,
            height: self.height,
            bounce_amplitude: self.bounce,
            bounce_rate: rate,
            bounce_phase: -rate * t_mid - std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn schedule_lead_ticks(&self) -> i64 {
        (self.schedule_offset * self.rate).round() as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub state: TrunkState,
    pub contacts: [bool; 4],
    /// Body-frame forces on the trunk over the interval ending at `t`.
    pub forces: [Vector3<f64>; 4],
    /// Centroid of the stance footholds (ground level); the pseudo position
    /// measures the CoM relative to this point.
    pub origin: Vector3<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimTrace {
    pub ts: f64,
    pub truth: Vec<TruthSample>,
    pub sensors: Vec<SensorFrame>,
    /// Contact flags a gait controller would report.
    pub commanded: Vec<[bool; 4]>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }
}

/// World-frame foot position, velocity and acceleration of one leg.
#[derive(Clone, Copy, Debug, PartialEq)]
struct FootMotion {
    position: Vector3<f64>,
    velocity: Vector3<f64>,
    acceleration: Vector3<f64>,
}

struct LegPlanner<'a> {
    cfg: &'a SimConfig,
    params: &'a RobotParams,
    gait: &'a GaitSchedule,
    reference: Reference,
}

impl LegPlanner<'_> {
    fn foothold(&self, leg: LegIndex, stance_index: i64) -> Vector3<f64> {
        let legs = &self.params.legs;
        let hip = legs.hip_offsets[leg.index()];
        let t_mid = self.gait.stance_midpoint(leg, stance_index) * self.cfg.ts();
        let base = self.reference.position(t_mid);
        Vector3::new(base.x + hip.x, base.y + hip.y + leg.side() * legs.l_hip, 0.0)
    }

    fn foot(&self, leg: LegIndex, n: i64) -> (Phase, FootMotion) {
        let phase = self.gait.phase(leg, n);
        let target = self.foothold(leg, phase.stance_index);
        if phase.stance {
            return (
                phase,
                FootMotion {
                    position: target,
                    velocity: Vector3::zeros(),
                    acceleration: Vector3::zeros(),
                },
            );
        }
        let ts = self.cfg.ts();
        let start = self.foothold(leg, phase.stance_index - 1);
        let t0 = (phase.start - 1) as f64 * ts;
        let duration = (phase.end - phase.start + 1) as f64 * ts;
        let s = ((n as f64 * ts - t0) / duration).clamp(0.0, 1.0);
        let sd = 1.0 / duration;
        let pi = std::f64::consts::PI;
        let delta = target - start;
        let h = self.cfg.swing_height;
        let (sin, cos) = (pi * s).sin_cos();
        let horizontal = 0.5 * (1.0 - cos);
        let position = start + delta * horizontal + Vector3::new(0.0, 0.0, h * sin * sin);
        let velocity = delta * (0.5 * pi * sin * sd) + Vector3::new(0.0, 0.0, h * pi * (2.0 * pi * s).sin() * sd);
        let acceleration = delta * (0.5 * pi * pi * cos * sd * sd)
            + Vector3::new(0.0, 0.0, h * 2.0 * pi * pi * (2.0 * pi * s).cos() * sd * sd);
        (
            phase,
            FootMotion {
                position,
                velocity,
                acceleration,
            },
        )
    }
}

fn euler_rates(theta: &Vector3<f64>, omega: &Vector3<f64>, exact: bool) -> Vector3<f64> {
    if exact {
        euler_rate_matrix(theta).try_inverse().unwrap_or_else(Matrix3::zeros) * omega
    } else {
        rotation_wf_to_bf(theta) * omega
    }
}

/// Runs a scenario and returns the full trace.
pub fn run_scenario(cfg: &SimConfig, params: &RobotParams) -> Result<SimTrace> {
    cfg.validate()?;
    params.validate()?;
    let gait = cfg.schedule()?;
    let ts = cfg.ts();
    let planner = LegPlanner {
        cfg,
        params,
        gait: &gait,
        reference: cfg.reference(&gait),
    };
    let reference = planner.reference;
    let lead = cfg.schedule_lead_ticks();

    let mut sensor_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mismatch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    mismatch_rng.set_stream(1);

    let n_ticks = cfg.ticks();
    let mut trace = SimTrace {
        ts,
        truth: Vec::with_capacity(n_ticks),
        sensors: Vec::with_capacity(n_ticks),
        commanded: Vec::with_capacity(n_ticks),
    };

    let mut state = TrunkState {
        position: reference.position(0.0),
        velocity: reference.velocity(0.0),
        ..Default::default()
    };
    let mut origin = Vector3::zeros();

    for n in 0..n_ticks as i64 {
        let t = n as f64 * ts;
        let feet: Vec<(Phase, FootMotion)> = LegIndex::ALL.iter().map(|&leg| planner.foot(leg, n)).collect();
        let contacts = [0, 1, 2, 3].map(|i| feet[i].0.stance);
        let feet_world = [0, 1, 2, 3].map(|i| feet[i].1.position);

        // forces over (t − ts, t], planned from the previous state
        let previous = state;
        let t_prev = (t - ts).max(0.0);
        let desired = desired_acceleration(&previous, &reference, &cfg.gains, t_prev);
        let body_feet = feet_in_body(&previous, &feet_world);
        let stance = synthesize_stance_forces(&previous, &contacts, &body_feet, params, &desired);

        let mut extra = ExternalWrench {
            moment: stance.moment_residual,
            force: Vector3::zeros(),
        };
        if cfg.model_mismatch > 0.0 {
            let draw = |rng: &mut ChaCha8Rng| Vector3::from_fn(|_, _| StandardNormal.sample(rng));
            extra.force = draw(&mut mismatch_rng) * cfg.model_mismatch;
            extra.moment += draw(&mut mismatch_rng) * (0.1 * cfg.model_mismatch);
        }
        if n > 0 {
            let input = TruthInput {
                forces: &stance.forces,
                contacts: &contacts,
                feet_world: &feet_world,
                external: extra,
                exact_euler_rates: cfg.exact_euler_rates,
            };
            state = step_truth(&state, &input, params, ts)?;
        }

        // joint states at t
        let r_bw = rotation_bf_to_wf(&state.theta);
        let omega_frame = euler_rate_matrix(&state.theta)
            * euler_rates(&state.theta, &state.omega, cfg.exact_euler_rates);
        let mut legs = [LegState::default(); 4];
        for leg in LegIndex::ALL {
            let i = leg.index();
            let motion = feet[i].1;
            let rel = motion.position - state.position;
            let p_bf = r_bw.transpose() * rel;
            let q = params
                .legs
                .inverse_kinematics(leg, &p_bf)
                .ok_or(Error::Unreachable { leg, t })?;
            let j = params.legs.jacobian(leg, &q);
            let p_dot = r_bw.transpose() * (motion.velocity - state.velocity - omega_frame.cross(&rel));
            let q_dot = j.lu().solve(&p_dot).unwrap_or_else(Vector3::zeros);
            let load = if contacts[i] {
                stance.forces[i]
            } else {
                r_bw.transpose() * ((params.gravity - motion.acceleration) * cfg.swing_leg_mass)
            };
            legs[i] = LegState {
                q,
                q_dot,
                tau: params.legs.joint_torques(leg, &q, &load, params.force_convention),
            };
        }

        let stance_feet: Vec<Vector3<f64>> = (0..4).filter(|&i| contacts[i]).map(|i| feet_world[i]).collect();
        if !stance_feet.is_empty() {
            let c = stance_feet.iter().sum::<Vector3<f64>>() / stance_feet.len() as f64;
            origin = Vector3::new(c.x, c.y, 0.0);
        }

        let frame = synthesize_sensors(
            t,
            &state,
            &stance.forces,
            &contacts,
            &legs,
            &extra.force,
            params,
            &cfg.noise,
            &mut sensor_rng,
        );
        trace.truth.push(TruthSample {
            t,
            state,
            contacts,
            forces: stance.forces,
            origin,
        });
        trace.sensors.push(frame);
        trace.commanded.push(gait.commanded(n, lead));
    }
    Ok(trace)
}
