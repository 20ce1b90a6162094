//! Physical parameters of the quadruped and per-leg kinematics.
//!
//! Every leg is a three-joint chain hanging from a hip mount on the trunk:
//!
//! 1. hip roll about the body x axis,
//! 2. a lateral hip link of length `l_hip`, pointing outward (+y for left
//!    legs, -y for right legs),
//! 3. hip pitch about the body y axis, thigh of length `l_thigh` along -z,
//! 4. knee pitch about the body y axis, calf of length `l_calf` along -z.
//!
//! With all joints at zero the leg points straight down. A knee angle of zero
//! is the fully extended (singular) configuration; the working range uses
//! negative knee angles.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Below this |det J| force recovery refuses to invert the Jacobian.
pub const SINGULAR_DET_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LegIndex {
    FL = 0,
    FR = 1,
    RL = 2,
    RR = 3,
}

impl LegIndex {
    pub const ALL: [LegIndex; 4] = [LegIndex::FL, LegIndex::FR, LegIndex::RL, LegIndex::RR];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// +1 for left legs, -1 for right legs.
    pub fn side(self) -> f64 {
        match self {
            LegIndex::FL | LegIndex::RL => 1.0,
            LegIndex::FR | LegIndex::RR => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LegIndex::FL => "FL",
            LegIndex::FR => "FR",
            LegIndex::RL => "RL",
            LegIndex::RR => "RR",
        }
    }
}

impl std::str::FromStr for LegIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FL" => Ok(LegIndex::FL),
            "FR" => Ok(LegIndex::FR),
            "RL" => Ok(LegIndex::RL),
            "RR" => Ok(LegIndex::RR),
            other => Err(Error::config(format!("unknown leg `{other}`"))),
        }
    }
}

/// How joint torques relate to the foot force.
///
/// `Inverse` recovers the force as `J⁻¹ τ` (and the simulator synthesizes
/// `τ = J f`); `Transpose` uses the statics relation `τ = Jᵀ f`, `f = J⁻ᵀ τ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ForceConvention {
    #[default]
    Inverse,
    Transpose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LegGeometry {
    /// Hip mount relative to the trunk CoM, body frame, in `LegIndex` order.
    pub hip_offsets: [Vector3<f64>; 4],
    pub l_hip: f64,
    pub l_thigh: f64,
    pub l_calf: f64,
}

impl Default for LegGeometry {
    fn default() -> Self {
        LegGeometry {
            hip_offsets: [
                Vector3::new(0.18, 0.13, 0.0),
                Vector3::new(0.18, -0.13, 0.0),
                Vector3::new(-0.18, 0.13, 0.0),
                Vector3::new(-0.18, -0.13, 0.0),
            ],
            l_hip: 0.08,
            l_thigh: 0.21,
            l_calf: 0.21,
        }
    }
}

/// Result of recovering a foot force from joint torques.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceRecovery {
    pub force: Vector3<f64>,
    /// 2-norm condition number of the Jacobian used for the recovery.
    pub condition: f64,
}

impl LegGeometry {
    fn chain_terms(&self, leg: LegIndex, q: &Vector3<f64>) -> ChainTerms {
        let (s0, c0) = q[0].sin_cos();
        let a = q[1];
        let b = q[1] + q[2];
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        let x = -self.l_thigh * sa - self.l_calf * sb;
        let y = leg.side() * self.l_hip;
        let z = -self.l_thigh * ca - self.l_calf * cb;
        ChainTerms {
            s0,
            c0,
            sb,
            cb,
            x,
            y,
            z,
        }
    }

    /// Foot position relative to the trunk CoM, body frame.
    pub fn forward_kinematics(&self, leg: LegIndex, q: &Vector3<f64>) -> Vector3<f64> {
        let t = self.chain_terms(leg, q);
        self.hip_offsets[leg.index()]
            + Vector3::new(t.x, t.c0 * t.y - t.s0 * t.z, t.s0 * t.y + t.c0 * t.z)
    }

    /// Analytic foot Jacobian `∂p/∂q` in the body frame.
    pub fn jacobian(&self, leg: LegIndex, q: &Vector3<f64>) -> Matrix3<f64> {
        let t = self.chain_terms(leg, q);
        let l2 = self.l_calf;
        Matrix3::new(
            0.0,
            t.z,
            -l2 * t.cb,
            -t.s0 * t.y - t.c0 * t.z,
            t.s0 * t.x,
            -t.s0 * l2 * t.sb,
            t.c0 * t.y - t.s0 * t.z,
            -t.c0 * t.x,
            t.c0 * l2 * t.sb,
        )
    }

    pub fn foot_velocity(
        &self,
        leg: LegIndex,
        q: &Vector3<f64>,
        q_dot: &Vector3<f64>,
    ) -> Vector3<f64> {
        self.jacobian(leg, q) * q_dot
    }

    pub fn estimate_contact_force(
        &self,
        leg: LegIndex,
        q: &Vector3<f64>,
        tau: &Vector3<f64>,
        convention: ForceConvention,
    ) -> Result<ForceRecovery> {
        recover_force(&self.jacobian(leg, q), tau, convention).map_err(|e| match e {
            Error::SingularJacobian { det, .. } => Error::SingularJacobian { leg, det },
            other => other,
        })
    }

    /// Joint torques that produce `force` at the foot under `convention`.
    pub fn joint_torques(
        &self,
        leg: LegIndex,
        q: &Vector3<f64>,
        force: &Vector3<f64>,
        convention: ForceConvention,
    ) -> Vector3<f64> {
        let j = self.jacobian(leg, q);
        match convention {
            ForceConvention::Inverse => j * force,
            ForceConvention::Transpose => j.transpose() * force,
        }
    }

    /// Joint angles placing the foot at `p` (body frame, relative to CoM).
    ///
    /// Returns the knee-backward solution (negative knee angle), or `None`
    /// when `p` is out of reach.
    pub fn inverse_kinematics(&self, leg: LegIndex, p: &Vector3<f64>) -> Option<Vector3<f64>> {
        let r = p - self.hip_offsets[leg.index()];
        let y_link = leg.side() * self.l_hip;
        let yz_sq = r.y * r.y + r.z * r.z - self.l_hip * self.l_hip;
        if yz_sq < 0.0 {
            return None;
        }
        let z_plane = -yz_sq.sqrt();
        let roll = r.z.atan2(r.y) - z_plane.atan2(y_link);

        let (l1, l2) = (self.l_thigh, self.l_calf);
        let x_plane = r.x;
        let dist_sq = x_plane * x_plane + z_plane * z_plane;
        let cos_knee = (dist_sq - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if !(-1.0..=1.0).contains(&cos_knee) {
            return None;
        }
        let knee = -cos_knee.acos();
        let k1 = l1 + l2 * knee.cos();
        let k2 = l2 * knee.sin();
        let hip_pitch = (-x_plane).atan2(-z_plane) - k2.atan2(k1);
        Some(Vector3::new(wrap_angle(roll), wrap_angle(hip_pitch), knee))
    }

    /// Upper bound on the FK output norm for `leg`.
    pub fn reach_bound(&self, leg: LegIndex) -> f64 {
        self.hip_offsets[leg.index()].norm() + self.l_hip + self.l_thigh + self.l_calf
    }
}

struct ChainTerms {
    s0: f64,
    c0: f64,
    sb: f64,
    cb: f64,
    x: f64,
    y: f64,
    z: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w.is_finite() {
        w
    } else {
        a
    }
}

/// Recover a foot force from joint torques given the leg Jacobian.
pub fn recover_force(
    jacobian: &Matrix3<f64>,
    tau: &Vector3<f64>,
    convention: ForceConvention,
) -> Result<ForceRecovery> {
    let det = jacobian.determinant();
    if !det.is_finite() || det.abs() < SINGULAR_DET_THRESHOLD {
        // Leg is filled in by the caller.
        return Err(Error::SingularJacobian {
            leg: LegIndex::FL,
            det,
        });
    }
    let j = match convention {
        ForceConvention::Inverse => *jacobian,
        ForceConvention::Transpose => jacobian.transpose(),
    };
    let force = j
        .lu()
        .solve(tau)
        .ok_or(Error::SingularJacobian { leg: LegIndex::FL, det })?;
    let sv = jacobian.singular_values();
    let condition = sv.max() / sv.min();
    Ok(ForceRecovery { force, condition })
}

/// Mass properties and leg geometry of the robot.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotParams {
    pub mass: f64,
    /// Trunk inertia about the CoM, body frame.
    pub trunk_inertia: Matrix3<f64>,
    /// World-frame gravity.
    pub gravity: Vector3<f64>,
    pub legs: LegGeometry,
    pub force_convention: ForceConvention,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            mass: 12.0,
            trunk_inertia: Matrix3::from_diagonal(&Vector3::new(0.0168, 0.0565, 0.0647)),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            legs: LegGeometry::default(),
            force_convention: ForceConvention::Inverse,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::config(format!("mass must be > 0, got {}", self.mass)));
        }
        let i = &self.trunk_inertia;
        if (i - i.transpose()).amax() > 1e-12 * i.amax().max(1.0) {
            return Err(Error::config("trunk inertia must be symmetric"));
        }
        if i.cholesky().is_none() {
            return Err(Error::config("trunk inertia must be positive definite"));
        }
        let g = &self.legs;
        if !(g.l_hip >= 0.0 && g.l_thigh > 0.0 && g.l_calf > 0.0) {
            return Err(Error::config("leg link lengths must be positive"));
        }
        if !self.gravity.iter().all(|v| v.is_finite()) {
            return Err(Error::config("gravity must be finite"));
        }
        Ok(())
    }

    pub fn inertia_inverse(&self) -> Matrix3<f64> {
        self.trunk_inertia
            .try_inverse()
            .expect("validated trunk inertia is invertible")
    }
}

/// Joint-space measurements of one leg.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LegState {
    pub q: Vector3<f64>,
    pub q_dot: Vector3<f64>,
    pub tau: Vector3<f64>,
}

impl LegState {
    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.q_dot.iter()).chain(self.tau.iter()).all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rot_x(a: f64) -> nalgebra::Matrix4<f64> {
        let (s, c) = a.sin_cos();
        nalgebra::Matrix4::new(
            1.0, 0.0, 0.0, 0.0, 0.0, c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, 1.0,
        )
    }

    fn rot_y(a: f64) -> nalgebra::Matrix4<f64> {
        let (s, c) = a.sin_cos();
        nalgebra::Matrix4::new(
            c, 0.0, s, 0.0, 0.0, 1.0, 0.0, 0.0, -s, 0.0, c, 0.0, 0.0, 0.0, 0.0, 1.0,
        )
    }

    fn trans(v: Vector3<f64>) -> nalgebra::Matrix4<f64> {
        nalgebra::Matrix4::new_translation(&v)
    }

    /// Homogeneous-transform chain, written independently of the closed form.
    fn fk_oracle(g: &LegGeometry, leg: LegIndex, q: &Vector3<f64>) -> Vector3<f64> {
        let t = trans(g.hip_offsets[leg.index()])
            * rot_x(q[0])
            * trans(Vector3::new(0.0, leg.side() * g.l_hip, 0.0))
            * rot_y(q[1])
            * trans(Vector3::new(0.0, 0.0, -g.l_thigh))
            * rot_y(q[2])
            * trans(Vector3::new(0.0, 0.0, -g.l_calf));
        Vector3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)])
    }

    fn random_q(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-0.8..0.8),
            rng.random_range(-1.0..3.9),
            rng.random_range(-2.7..-0.6),
        )
    }

    #[test]
    fn fk_zero_pose_front_left() {
        let g = LegGeometry::default();
        let p = g.forward_kinematics(LegIndex::FL, &Vector3::zeros());
        assert!((p - Vector3::new(0.18, 0.21, -0.42)).amax() < 1e-15);
        assert!((p - fk_oracle(&g, LegIndex::FL, &Vector3::zeros())).amax() < 1e-15);
    }

    #[test]
    fn fk_matches_transform_chain() {
        let g = LegGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let q = random_q(&mut rng);
            for leg in LegIndex::ALL {
                let d = g.forward_kinematics(leg, &q) - fk_oracle(&g, leg, &q);
                assert!(d.amax() < 1e-14, "{leg:?} {q:?}");
            }
        }
    }

    #[test]
    fn folded_calf_height() {
        let g = LegGeometry {
            l_calf: 0.15,
            ..Default::default()
        };
        for leg in LegIndex::ALL {
            let p = g.forward_kinematics(leg, &Vector3::new(0.0, 0.0, PI));
            let dz = p.z - g.hip_offsets[leg.index()].z;
            assert!((dz.abs() - (g.l_thigh - g.l_calf).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn fk_and_jacobian_are_periodic() {
        let g = LegGeometry::default();
        let q = Vector3::new(0.1, 0.7, -1.4);
        for j in 0..3 {
            let mut q2 = q;
            q2[j] += TAU;
            for leg in LegIndex::ALL {
                assert!((g.forward_kinematics(leg, &q) - g.forward_kinematics(leg, &q2)).amax() < 1e-12);
                assert!((g.jacobian(leg, &q) - g.jacobian(leg, &q2)).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let g = LegGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..100 {
            let q = random_q(&mut rng);
            for leg in LegIndex::ALL {
                let j = g.jacobian(leg, &q);
                for k in 0..3 {
                    let mut qp = q;
                    let mut qm = q;
                    qp[k] += h;
                    qm[k] -= h;
                    let fd = (g.forward_kinematics(leg, &qp) - g.forward_kinematics(leg, &qm)) / (2.0 * h);
                    assert!((j.column(k) - fd).amax() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn straight_leg_is_singular() {
        let g = LegGeometry::default();
        for leg in LegIndex::ALL {
            let q = Vector3::new(0.2, 0.4, 0.0);
            assert!(g.jacobian(leg, &q).determinant().abs() < 1e-15);
            let err = g
                .estimate_contact_force(leg, &q, &Vector3::new(1.0, 2.0, 3.0), ForceConvention::Inverse)
                .unwrap_err();
            assert!(matches!(err, Error::SingularJacobian { leg: l, .. } if l == leg));
        }
    }

    #[test]
    fn foot_velocity_is_linear_and_matches_fd() {
        let g = LegGeometry::default();
        let q = Vector3::new(0.05, 0.8, -1.5);
        let qd = Vector3::new(0.3, -1.2, 2.0);
        let v = g.foot_velocity(LegIndex::RR, &q, &qd);
        assert_eq!(g.foot_velocity(LegIndex::RR, &q, &Vector3::zeros()), Vector3::zeros());
        assert!((g.foot_velocity(LegIndex::RR, &q, &(2.0 * qd)) - 2.0 * v).amax() < 1e-14);
        for h in [1e-3, 1e-4, 1e-5] {
            let fd = (g.forward_kinematics(LegIndex::RR, &(q + qd * h))
                - g.forward_kinematics(LegIndex::RR, &q))
                / h;
            // first-order difference: error shrinks linearly in h
            assert!((fd - v).amax() < 20.0 * h);
        }
    }

    #[test]
    fn identity_jacobian_force_recovery() {
        let r = recover_force(&Matrix3::identity(), &Vector3::new(0.0, 0.0, 5.0), ForceConvention::Inverse)
            .unwrap();
        assert_eq!(r.force, Vector3::new(0.0, 0.0, 5.0));
        assert!((r.condition - 1.0).abs() < 1e-12);
    }

    #[test]
    fn force_round_trip_both_conventions() {
        let g = LegGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            let f = Vector3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(0.0..100.0),
            );
            for leg in LegIndex::ALL {
                if g.jacobian(leg, &q).determinant().abs() < 1e-6 {
                    continue;
                }
                for conv in [ForceConvention::Inverse, ForceConvention::Transpose] {
                    let tau = g.joint_torques(leg, &q, &f, conv);
                    let r = g.estimate_contact_force(leg, &q, &tau, conv).unwrap();
                    assert!((r.force - f).amax() < 1e-9, "{conv:?}");
                }
            }
        }
    }

    #[test]
    fn fk_norm_is_bounded() {
        let g = LegGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let q = Vector3::new(
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
            );
            for leg in LegIndex::ALL {
                assert!(g.forward_kinematics(leg, &q).norm() <= g.reach_bound(leg) + 1e-12);
            }
        }
    }

    #[test]
    fn inverse_kinematics_round_trip() {
        let g = LegGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let q = Vector3::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.3..1.2),
                rng.random_range(-2.2..-0.4),
            );
            for leg in LegIndex::ALL {
                let p = g.forward_kinematics(leg, &q);
                let q_ik = g.inverse_kinematics(leg, &p).expect("reachable");
                assert!((q_ik - q).amax() < 1e-9, "{leg:?}: {q:?} vs {q_ik:?}");
            }
        }
        assert!(g
            .inverse_kinematics(LegIndex::FL, &Vector3::new(0.18, 0.21, -0.9))
            .is_none());
    }

    #[test]
    fn default_params_validate() {
        RobotParams::default().validate().unwrap();
        let bad = RobotParams {
            mass: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let mut asym = RobotParams::default();
        asym.trunk_inertia[(0, 1)] = 0.01;
        assert!(asym.validate().is_err());
    }
}
