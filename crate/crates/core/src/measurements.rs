//! Measurement assembly: pseudo position and velocity from contact-weighted
//! leg kinematics, their confidence scaling, and the noise covariances.

use nalgebra::{SVector, Vector3};

use crate::dynamics::{rotation_bf_to_wf, MeasMatrix, MeasVector, StateMatrix, MEAS_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::model::{LegGeometry, LegIndex, LegState};

/// Zero-based rows of `y` that carry pseudo measurements.
pub const PSEUDO_ROWS: [usize; 6] = [3, 4, 5, 9, 10, 11];

/// One tick of raw sensor channels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SensorFrame {
    pub t: f64,
    pub theta_bar: Vector3<f64>,
    /// Body-frame specific force from contacts.
    pub accel_bar: Vector3<f64>,
    /// Body-frame angular rate.
    pub omega_bar: Vector3<f64>,
    pub legs: [LegState; 4],
}

impl SensorFrame {
    pub fn check_finite(&self) -> Result<()> {
        let finite = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
        if !self.t.is_finite() {
            return Err(Error::NonFiniteMeasurement("time"));
        }
        if !finite(&self.theta_bar) {
            return Err(Error::NonFiniteMeasurement("euler angles"));
        }
        if !finite(&self.accel_bar) {
            return Err(Error::NonFiniteMeasurement("acceleration"));
        }
        if !finite(&self.omega_bar) {
            return Err(Error::NonFiniteMeasurement("angular rate"));
        }
        if !self.legs.iter().all(LegState::is_finite) {
            return Err(Error::NonFiniteMeasurement("joint channels"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementBundle {
    pub raw: SensorFrame,
    /// `[Θ̄; p̃ (world); ω̄ (body); ṽ (world); ā (body)]`
    pub y: MeasVector,
    pub r_scale: f64,
    pub pseudo_valid: bool,
}

impl MeasurementBundle {
    pub fn measurement_noise(&self, noise: &NoiseConfig) -> MeasMatrix {
        if self.pseudo_valid {
            build_r(noise, self.r_scale)
        } else {
            let mut r = build_r(noise, 1.0);
            for i in PSEUDO_ROWS {
                r[(i, i)] *= noise.flight_inflation;
            }
            r
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    pub q_diag: SVector<f64, STATE_DIM>,
    /// Base diagonal before confidence scaling.
    pub r_diag: SVector<f64, MEAS_DIM>,
    /// Contact-probability threshold `p̄` for pseudo-measurement weights.
    pub threshold: f64,
    /// Extra factor on the pseudo entries when no leg is a confident contact.
    pub flight_inflation: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        #[rustfmt::skip]
        let q = [1.0, 1.0, 1.0, 10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 0.01, 0.01, 0.01];
        #[rustfmt::skip]
        let r = [1.0, 1.0, 1.0, 1e4, 1e4, 10.0, 1.0, 1.0, 1.0, 1e4, 1e4, 1e4, 1.0, 1.0, 1.0];
        NoiseConfig {
            q_diag: SVector::from_iterator(q.iter().map(|v| v * 1e-2)),
            r_diag: SVector::from_iterator(r.iter().map(|v| v * 1e-4)),
            threshold: 0.6,
            flight_inflation: 1e3,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_diag.iter().chain(self.r_diag.iter()).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config("noise diagonals must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::InvalidProbability {
                name: "threshold".into(),
                value: self.threshold,
            });
        }
        if !(self.flight_inflation >= 1.0) {
            return Err(Error::config("flight_inflation must be >= 1"));
        }
        Ok(())
    }

    pub fn process_noise(&self) -> StateMatrix {
        StateMatrix::from_diagonal(&self.q_diag)
    }
}

/// `h(p) = max(p − p̄, 0)`.
pub fn contact_weight(p: f64, threshold: f64) -> f64 {
    (p - threshold).max(0.0)
}

/// `1 / (1 + 100 Σ h(pᵢ))`.
pub fn r_scale(p: &[f64; 4], threshold: f64) -> f64 {
    1.0 / (1.0 + 100.0 * p.iter().map(|&v| contact_weight(v, threshold)).sum::<f64>())
}

/// Base diagonal with the six pseudo entries multiplied by `r_scale`.
pub fn build_r(noise: &NoiseConfig, r_scale: f64) -> MeasMatrix {
    let mut d = noise.r_diag;
    for i in PSEUDO_ROWS {
        d[i] *= r_scale;
    }
    MeasMatrix::from_diagonal(&d)
}

fn weighted_negative_average(
    candidates: impl Iterator<Item = Vector3<f64>>,
    p: &[f64; 4],
    threshold: f64,
    theta_hat: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let r = rotation_bf_to_wf(theta_hat);
    let mut total = 0.0;
    let mut acc = Vector3::zeros();
    for (leg, v) in candidates.enumerate() {
        let h = contact_weight(p[leg], threshold);
        if h > 0.0 {
            total += h;
            acc += v * h;
        }
    }
    (total > 0.0).then(|| -(r * acc) / total)
}

/// Trunk velocity implied by stationary contact feet, world frame. `None` when
/// no leg is a confident contact.
pub fn pseudo_velocity(
    geometry: &LegGeometry,
    legs: &[LegState; 4],
    p: &[f64; 4],
    threshold: f64,
    theta_hat: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let feet = LegIndex::ALL
        .iter()
        .map(|&leg| geometry.foot_velocity(leg, &legs[leg.index()].q, &legs[leg.index()].q_dot));
    weighted_negative_average(feet, p, threshold, theta_hat)
}

/// CoM position relative to the weighted foothold centroid, world-aligned; the
/// z component is the height above the contact feet.
pub fn pseudo_position(
    geometry: &LegGeometry,
    legs: &[LegState; 4],
    p: &[f64; 4],
    threshold: f64,
    theta_hat: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let feet = LegIndex::ALL
        .iter()
        .map(|&leg| geometry.forward_kinematics(leg, &legs[leg.index()].q));
    weighted_negative_average(feet, p, threshold, theta_hat)
}

/// Assembles measurement vectors tick by tick, holding the last valid pseudo
/// values through phases without confident contact.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasurementAssembler {
    last_position: Vector3<f64>,
    last_velocity: Vector3<f64>,
}

impl MeasurementAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn assemble(
        &mut self,
        geometry: &LegGeometry,
        noise: &NoiseConfig,
        frame: &SensorFrame,
        p: &[f64; 4],
        theta_hat: &Vector3<f64>,
    ) -> Result<MeasurementBundle> {
        frame.check_finite()?;
        let pos = pseudo_position(geometry, &frame.legs, p, noise.threshold, theta_hat);
        let vel = pseudo_velocity(geometry, &frame.legs, p, noise.threshold, theta_hat);
        let pseudo_valid = pos.is_some() && vel.is_some();
        if let (Some(pos), Some(vel)) = (pos, vel) {
            self.last_position = pos;
            self.last_velocity = vel;
        }
        let mut y = MeasVector::zeros();
        y.fixed_rows_mut::<3>(0).copy_from(&frame.theta_bar);
        y.fixed_rows_mut::<3>(3).copy_from(&self.last_position);
        y.fixed_rows_mut::<3>(6).copy_from(&frame.omega_bar);
        y.fixed_rows_mut::<3>(9).copy_from(&self.last_velocity);
        y.fixed_rows_mut::<3>(12).copy_from(&frame.accel_bar);
        Ok(MeasurementBundle {
            raw: *frame,
            y,
            r_scale: if pseudo_valid { r_scale(p, noise.threshold) } else { 1.0 },
            pseudo_valid,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_c, rotation_wf_to_bf, TrunkState};
    use proptest::prelude::*;

    /// Joint states placing each foot at `feet` with body-frame velocity `vel`.
    fn legs_at(feet: [Vector3<f64>; 4], vel: [Vector3<f64>; 4]) -> (LegGeometry, [LegState; 4]) {
        let g = LegGeometry::default();
        let mut legs = [LegState::default(); 4];
        for leg in LegIndex::ALL {
            let i = leg.index();
            let q = g.inverse_kinematics(leg, &feet[i]).expect("reachable");
            let j = g.jacobian(leg, &q);
            legs[i] = LegState {
                q,
                q_dot: j.try_inverse().unwrap() * vel[i],
                tau: Vector3::zeros(),
            };
        }
        (g, legs)
    }

    fn stance_feet(z: f64) -> [Vector3<f64>; 4] {
        [
            Vector3::new(0.18, 0.21, z),
            Vector3::new(0.18, -0.21, z),
            Vector3::new(-0.18, 0.21, z),
            Vector3::new(-0.18, -0.21, z),
        ]
    }

    #[test]
    fn weights_and_scale() {
        assert_eq!(contact_weight(0.6, 0.6), 0.0);
        assert!((contact_weight(0.95, 0.6) - 0.35).abs() < 1e-15);
        assert_eq!(contact_weight(0.2, 0.6), 0.0);
        assert_eq!(r_scale(&[0.0; 4], 0.6), 1.0);
        assert!((r_scale(&[1.0; 4], 0.6) - 1.0 / 161.0).abs() < 1e-15);
        assert!((r_scale(&[0.95, 0.95, 0.0, 0.0], 0.6) - 1.0 / 71.0).abs() < 1e-15);
    }

    #[test]
    fn r_diagonal() {
        let n = NoiseConfig::default();
        let r = build_r(&n, 1.0);
        assert!((r[(3, 3)] - 1.0).abs() < 1e-15);
        assert!((r[(4, 4)] - 1.0).abs() < 1e-15);
        assert!((r[(5, 5)] - 1e-3).abs() < 1e-18);
        assert!((r[(9, 9)] - 1.0).abs() < 1e-15);
        let small = build_r(&n, 1e-9);
        for i in 0..15 {
            if PSEUDO_ROWS.contains(&i) {
                assert!(small[(i, i)] < 1e-8);
            } else {
                assert_eq!(small[(i, i)], r[(i, i)]);
                assert!((r[(i, i)] - 1e-4).abs() < 1e-18);
            }
        }
        assert_eq!(r, MeasMatrix::from_diagonal(&r.diagonal()));
    }

    #[test]
    fn single_leg_velocity_sign_flip() {
        let mut vel = [Vector3::zeros(); 4];
        vel[0] = Vector3::new(-0.5, 0.0, 0.0);
        let (g, legs) = legs_at(stance_feet(-0.3), vel);
        let v = pseudo_velocity(&g, &legs, &[1.0, 0.0, 0.0, 0.0], 0.6, &Vector3::zeros()).unwrap();
        assert!((v - Vector3::new(0.5, 0.0, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn opposite_velocities_cancel() {
        let v0 = Vector3::new(0.2, -0.1, 0.05);
        let (g, legs) = legs_at(stance_feet(-0.3), [v0, -v0, Vector3::zeros(), Vector3::zeros()]);
        let v = pseudo_velocity(&g, &legs, &[0.9, 0.9, 0.0, 0.0], 0.6, &Vector3::zeros()).unwrap();
        assert!(v.amax() < 1e-12);
    }

    #[test]
    fn flight_has_no_pseudo_measurement() {
        let (g, legs) = legs_at(stance_feet(-0.3), [Vector3::zeros(); 4]);
        assert!(pseudo_velocity(&g, &legs, &[0.5; 4], 0.6, &Vector3::zeros()).is_none());
        assert!(pseudo_position(&g, &legs, &[0.6; 4], 0.6, &Vector3::zeros()).is_none());
    }

    #[test]
    fn symmetric_stance_height() {
        let (g, legs) = legs_at(stance_feet(-0.3), [Vector3::zeros(); 4]);
        let p = pseudo_position(&g, &legs, &[1.0; 4], 0.6, &Vector3::zeros()).unwrap();
        assert!((p - Vector3::new(0.0, 0.0, 0.3)).amax() < 1e-12);
    }

    #[test]
    fn single_leg_position_negation() {
        let mut feet = stance_feet(-0.3);
        feet[0] = Vector3::new(0.2, 0.15, -0.3);
        let (g, legs) = legs_at(feet, [Vector3::zeros(); 4]);
        let p = pseudo_position(&g, &legs, &[1.0, 0.0, 0.0, 0.0], 0.6, &Vector3::zeros()).unwrap();
        assert!((p - Vector3::new(-0.2, -0.15, 0.3)).amax() < 1e-12);
    }

    #[test]
    fn flight_assembly_holds_values_with_inflated_noise() {
        let noise = NoiseConfig::default();
        let (g, legs) = legs_at(stance_feet(-0.3), [Vector3::zeros(); 4]);
        let frame = SensorFrame {
            legs,
            ..Default::default()
        };
        let mut asm = MeasurementAssembler::new();
        let stance = asm.assemble(&g, &noise, &frame, &[1.0; 4], &Vector3::zeros()).unwrap();
        assert!(stance.pseudo_valid);
        let flight = asm.assemble(&g, &noise, &frame, &[0.1; 4], &Vector3::zeros()).unwrap();
        assert!(!flight.pseudo_valid);
        assert_eq!(flight.r_scale, 1.0);
        assert_eq!(flight.y.fixed_rows::<3>(3), stance.y.fixed_rows::<3>(3));
        let r = flight.measurement_noise(&noise);
        assert!((r[(3, 3)] - 1e3).abs() < 1e-9);
        assert!((r[(0, 0)] - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn exact_sensors_give_zero_residual() {
        let noise = NoiseConfig::default();
        let state = TrunkState {
            theta: Vector3::new(0.02, -0.01, 0.4),
            position: Vector3::new(0.0, 0.0, 0.3),
            omega: Vector3::zeros(),
            velocity: Vector3::zeros(),
        };
        let r = rotation_wf_to_bf(&state.theta);
        // feet on the ground directly below nominal footholds
        let world_feet = stance_feet(0.0).map(|f| rotation_bf_to_wf(&state.theta) * Vector3::new(f.x, f.y, 0.0));
        let centroid = world_feet.iter().sum::<Vector3<f64>>() / 4.0;
        let world_feet = world_feet.map(|f| Vector3::new(f.x - centroid.x, f.y - centroid.y, 0.0));
        let body_feet = world_feet.map(|f| r * (f - state.position));
        let (g, legs) = legs_at(body_feet, [Vector3::zeros(); 4]);
        let frame = SensorFrame {
            theta_bar: state.theta,
            omega_bar: r * state.omega,
            legs,
            ..Default::default()
        };
        let b = MeasurementAssembler::new()
            .assemble(&g, &noise, &frame, &[1.0; 4], &state.theta)
            .unwrap();
        let residual = b.y - build_c(&state.theta) * state.to_vector();
        assert!(residual.amax() < 1e-12, "{residual}");
    }

    #[test]
    fn non_finite_channel_rejected() {
        let mut frame = SensorFrame::default();
        frame.omega_bar.x = f64::NAN;
        let err = MeasurementAssembler::new().assemble(
            &LegGeometry::default(),
            &NoiseConfig::default(),
            &frame,
            &[1.0; 4],
            &Vector3::zeros(),
        );
        assert!(matches!(err, Err(Error::NonFiniteMeasurement(_))));
    }

    proptest! {
        #[test]
        fn r_scale_monotone(p in proptest::array::uniform4(0.0f64..1.0), leg in 0usize..4, bump in 0.0f64..1.0) {
            let mut q = p;
            q[leg] = (q[leg] + bump).min(1.0);
            prop_assert!(r_scale(&q, 0.6) <= r_scale(&p, 0.6));
            let s = r_scale(&p, 0.6);
            prop_assert!(s > 0.0 && s <= 1.0);
            let r = build_r(&NoiseConfig::default(), s);
            prop_assert!(r.diagonal().iter().all(|v| *v > 0.0));
        }

        #[test]
        fn pseudo_velocity_in_convex_hull(
            p in proptest::array::uniform4(0.0f64..1.0),
            v in proptest::array::uniform4(proptest::array::uniform3(-1.0f64..1.0)),
            yaw in -3.0f64..3.0,
        ) {
            let vel = v.map(Vector3::from);
            let (g, legs) = legs_at(stance_feet(-0.3), vel);
            let theta = Vector3::new(0.0, 0.0, yaw);
            if let Some(out) = pseudo_velocity(&g, &legs, &p, 0.6, &theta) {
                // every coordinate lies within the candidates' range
                let r = rotation_bf_to_wf(&theta);
                let cands: Vec<Vector3<f64>> = (0..4)
                    .filter(|&i| p[i] > 0.6)
                    .map(|i| -(r * vel[i]))
                    .collect();
                for axis in 0..3 {
                    let lo = cands.iter().map(|c| c[axis]).fold(f64::INFINITY, f64::min);
                    let hi = cands.iter().map(|c| c[axis]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(out[axis] >= lo - 1e-9 && out[axis] <= hi + 1e-9);
                }
            }
        }
    }
}
