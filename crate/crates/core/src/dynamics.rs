//! Switched trunk model: contact modes, rotations, and the continuous and
//! discrete process/measurement matrices.
//!
//! State layout (12): `[Θ (roll, pitch, yaw); d_com (world); ω (world); v_com (world)]`.
//! Measurement layout (15): `[Θ̄; p̃ (world); ω̄ (body); ṽ (world); ā (body)]`.
//!
//! Euler angles use the ZYX convention everywhere in this crate:
//! `R_bf→wf(Θ) = Rz(yaw) · Ry(pitch) · Rx(roll)` and `R_wf→bf = R_bf→wfᵀ`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::model::RobotParams;

pub const STATE_DIM: usize = 12;
pub const MEAS_DIM: usize = 15;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type MeasVector = SVector<f64, MEAS_DIM>;
pub type MeasMatrix = SMatrix<f64, MEAS_DIM, MEAS_DIM>;
pub type ObservationMatrix = SMatrix<f64, MEAS_DIM, STATE_DIM>;
/// Stacked per-leg 3-vectors in FL, FR, RL, RR order.
pub type ForceVector = SVector<f64, 12>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, 12>;

pub const THETA: usize = 0;
pub const POSITION: usize = 3;
pub const OMEGA: usize = 6;
pub const VELOCITY: usize = 9;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrunkState {
    pub theta: Vector3<f64>,
    pub position: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl TrunkState {
    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(THETA).copy_from(&self.theta);
        x.fixed_rows_mut::<3>(POSITION).copy_from(&self.position);
        x.fixed_rows_mut::<3>(OMEGA).copy_from(&self.omega);
        x.fixed_rows_mut::<3>(VELOCITY).copy_from(&self.velocity);
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        TrunkState {
            theta: x.fixed_rows::<3>(THETA).into_owned(),
            position: x.fixed_rows::<3>(POSITION).into_owned(),
            omega: x.fixed_rows::<3>(OMEGA).into_owned(),
            velocity: x.fixed_rows::<3>(VELOCITY).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// One assignment of contact flags, `contacts[leg]` in FL, FR, RL, RR order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ContactMode {
    pub contacts: [bool; 4],
    /// 1-based mode number within its set.
    pub id: usize,
}

impl ContactMode {
    pub fn count(&self) -> usize {
        self.contacts.iter().filter(|&&c| c).count()
    }

    pub fn delta(&self, leg: usize) -> f64 {
        if self.contacts[leg] {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeSet {
    modes: Vec<ContactMode>,
}

impl ModeSet {
    pub fn new(patterns: &[[bool; 4]]) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::config("mode set must contain at least one mode"));
        }
        for (i, a) in patterns.iter().enumerate() {
            if patterns[..i].contains(a) {
                return Err(Error::config(format!("duplicate contact pattern {a:?}")));
            }
        }
        Ok(ModeSet {
            modes: patterns
                .iter()
                .enumerate()
                .map(|(i, &contacts)| ContactMode { contacts, id: i + 1 })
                .collect(),
        })
    }

    /// The eight modes used for trotting, in their conventional order: no
    /// contact, the two trot diagonals, the four three-leg stances, and full
    /// stance.
    pub fn trot() -> Self {
        const T: bool = true;
        const F: bool = false;
        ModeSet::new(&[
            [F, F, F, F],
            [F, T, T, F],
            [F, T, T, T],
            [T, F, F, T],
            [T, F, T, T],
            [T, T, F, T],
            [T, T, T, F],
            [T, T, T, T],
        ])
        .expect("static mode table is valid")
    }

    /// All sixteen contact patterns, ordered as binary counting with FL as the
    /// most significant flag.
    pub fn complete() -> Self {
        let patterns: Vec<[bool; 4]> = (0..16u8)
            .map(|k| [k & 8 != 0, k & 4 != 0, k & 2 != 0, k & 1 != 0])
            .collect();
        ModeSet::new(&patterns).expect("enumeration is unique")
    }

    pub fn single(contacts: [bool; 4]) -> Self {
        ModeSet::new(&[contacts]).expect("one mode is valid")
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[ContactMode] {
        &self.modes
    }

    pub fn get(&self, i: usize) -> &ContactMode {
        &self.modes[i]
    }

    /// Position of the mode with this contact pattern.
    pub fn position(&self, contacts: &[bool; 4]) -> Option<usize> {
        self.modes.iter().position(|m| &m.contacts == contacts)
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        let patterns: Vec<[bool; 4]> = order.iter().map(|&i| self.modes[i].contacts).collect();
        ModeSet::new(&patterns).expect("permutation of a valid set")
    }
}

/// Hypothetical foot forces, body frame, with per-leg validity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceEstimate {
    pub forces: [Vector3<f64>; 4],
    /// False when the leg's Jacobian was singular and the force was held.
    pub valid: [bool; 4],
}

impl Default for ForceEstimate {
    fn default() -> Self {
        ForceEstimate {
            forces: [Vector3::zeros(); 4],
            valid: [true; 4],
        }
    }
}

impl ForceEstimate {
    pub fn stacked(&self) -> ForceVector {
        let mut f = ForceVector::zeros();
        for (i, fi) in self.forces.iter().enumerate() {
            f.fixed_rows_mut::<3>(3 * i).copy_from(fi);
        }
        f
    }
}

/// Cross-product matrix: `skew(p) * f == p × f`.
pub fn skew(p: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -p.z, p.y, p.z, 0.0, -p.x, -p.y, p.x, 0.0)
}

pub fn rotation_bf_to_wf(theta: &Vector3<f64>) -> Matrix3<f64> {
    let (sr, cr) = theta[0].sin_cos();
    let (sp, cp) = theta[1].sin_cos();
    let (sy, cy) = theta[2].sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

pub fn rotation_wf_to_bf(theta: &Vector3<f64>) -> Matrix3<f64> {
    rotation_bf_to_wf(theta).transpose()
}

/// Maps ZYX Euler-angle rates to the world-frame angular velocity:
/// `ω = E(Θ) Θ̇`.
pub fn euler_rate_matrix(theta: &Vector3<f64>) -> Matrix3<f64> {
    let (sp, cp) = theta[1].sin_cos();
    let (sy, cy) = theta[2].sin_cos();
    Matrix3::new(cy * cp, -sy, 0.0, sy * cp, cy, 0.0, -sp, 0.0, 1.0)
}

/// Continuous-time state matrix. `Θ̇ = R_wf→bf(Θ) ω` and `ḋ = v`; zero
/// elsewhere.
pub fn build_a(theta: &Vector3<f64>) -> StateMatrix {
    let mut a = StateMatrix::zeros();
    a.fixed_view_mut::<3, 3>(THETA, OMEGA)
        .copy_from(&rotation_wf_to_bf(theta));
    a.fixed_view_mut::<3, 3>(POSITION, VELOCITY)
        .copy_from(&Matrix3::identity());
    a
}

/// Force-to-wrench map `B₂ᵏ` (6×12): rows `[moments; forces]` in body frame,
/// with the column block of every leg not in contact zeroed.
pub fn wrench_map(foot_positions: &[Vector3<f64>; 4], contacts: &[bool; 4]) -> SMatrix<f64, 6, 12> {
    let mut b2 = SMatrix::<f64, 6, 12>::zeros();
    for leg in 0..4 {
        if !contacts[leg] {
            continue;
        }
        b2.fixed_view_mut::<3, 3>(0, 3 * leg)
            .copy_from(&skew(&foot_positions[leg]));
        b2.fixed_view_mut::<3, 3>(3, 3 * leg)
            .copy_from(&Matrix3::identity());
    }
    b2
}

/// Mode-dependent input matrix `Bᵏ = B₁ B₂ᵏ`.
pub fn build_b(
    theta: &Vector3<f64>,
    foot_positions: &[Vector3<f64>; 4],
    contacts: &[bool; 4],
    params: &RobotParams,
) -> InputMatrix {
    let r = rotation_bf_to_wf(theta);
    let mut b1 = SMatrix::<f64, STATE_DIM, 6>::zeros();
    b1.fixed_view_mut::<3, 3>(OMEGA, 0)
        .copy_from(&(r * params.inertia_inverse()));
    b1.fixed_view_mut::<3, 3>(VELOCITY, 3)
        .copy_from(&(r / params.mass));
    b1 * wrench_map(foot_positions, contacts)
}

/// Gravity as a state-derivative vector (acts on `v̇` only).
pub fn gravity_input(g: &Vector3<f64>) -> StateVector {
    let mut out = StateVector::zeros();
    out.fixed_rows_mut::<3>(VELOCITY).copy_from(g);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discretized {
    pub ad: StateMatrix,
    pub bd: InputMatrix,
    pub gd: StateVector,
}

impl Discretized {
    /// Deterministic part of the transition: `bd f + gd`.
    pub fn input(&self, forces: &ForceVector) -> StateVector {
        self.bd * forces + self.gd
    }
}

/// First-order Euler discretization: `x⁺ = (I + Ts A) x + Ts g + Ts B f`.
pub fn discretize(a: &StateMatrix, b: &InputMatrix, g: &Vector3<f64>, ts: f64) -> Discretized {
    debug_assert!(ts > 0.0);
    Discretized {
        ad: StateMatrix::identity() + a * ts,
        bd: b * ts,
        gd: gravity_input(g) * ts,
    }
}

pub fn build_c(theta: &Vector3<f64>) -> ObservationMatrix {
    let mut c = ObservationMatrix::zeros();
    c.fixed_view_mut::<3, 3>(0, THETA)
        .copy_from(&Matrix3::identity());
    c.fixed_view_mut::<3, 3>(3, POSITION)
        .copy_from(&Matrix3::identity());
    c.fixed_view_mut::<3, 3>(6, OMEGA)
        .copy_from(&rotation_wf_to_bf(theta));
    c.fixed_view_mut::<3, 3>(9, VELOCITY)
        .copy_from(&Matrix3::identity());
    c
}

/// Force feedthrough: the accelerometer rows sum `(1/m) δᵢ fᵢ`.
pub fn build_d(contacts: &[bool; 4], mass: f64) -> SMatrix<f64, MEAS_DIM, 12> {
    let mut d = SMatrix::<f64, MEAS_DIM, 12>::zeros();
    for leg in 0..4 {
        if contacts[leg] {
            d.fixed_view_mut::<3, 3>(12, 3 * leg)
                .copy_from(&(Matrix3::identity() / mass));
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    #[test]
    fn skew_is_cross_product() {
        let s = skew(&Vector3::x());
        assert_eq!(s * Vector3::y(), Vector3::z());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = rand_vec(&mut rng, 2.0);
            let f = rand_vec(&mut rng, 2.0);
            assert!((skew(&p) * f - p.cross(&f)).amax() < 1e-14);
            assert!((skew(&p) * p).amax() < 1e-14);
            assert_eq!(skew(&p) + skew(&p).transpose(), Matrix3::zeros());
        }
    }

    #[test]
    fn rotation_properties() {
        assert_eq!(rotation_wf_to_bf(&Vector3::zeros()), Matrix3::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let th = rand_vec(&mut rng, 3.0);
            let r = rotation_wf_to_bf(&th);
            assert!((r * r.transpose() - Matrix3::identity()).amax() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            assert_eq!(rotation_bf_to_wf(&th), r.transpose());
        }
    }

    #[test]
    fn yaw_quarter_turn_maps_world_x_to_body_minus_y() {
        // Rz(π/2)ᵀ x̂ = -ŷ
        let r = rotation_wf_to_bf(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        assert!((r * Vector3::x() - (-Vector3::y())).amax() < 1e-15);
    }

    #[test]
    fn euler_rate_matrix_matches_rotation_derivative() {
        // For Θ̇, ω = E(Θ) Θ̇ satisfies Ṙ Rᵀ = skew(ω).
        let th = Vector3::new(0.2, -0.3, 0.7);
        let rate = Vector3::new(0.5, -0.2, 0.9);
        let h = 1e-6;
        let rdot = (rotation_bf_to_wf(&(th + rate * h)) - rotation_bf_to_wf(&(th - rate * h))) / (2.0 * h);
        let w = rdot * rotation_bf_to_wf(&th).transpose();
        let omega = Vector3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]);
        assert!((euler_rate_matrix(&th) * rate - omega).amax() < 1e-8);
    }

    #[test]
    fn a_matrix_structure() {
        let a = build_a(&Vector3::zeros());
        let mut expected = StateMatrix::zeros();
        for i in 0..3 {
            expected[(THETA + i, OMEGA + i)] = 1.0;
            expected[(POSITION + i, VELOCITY + i)] = 1.0;
        }
        assert_eq!(a, expected);

        let v = Vector3::new(0.4, -1.0, 2.0);
        let x = TrunkState {
            velocity: v,
            ..Default::default()
        };
        let dx = build_a(&Vector3::new(0.1, 0.2, 0.3)) * x.to_vector();
        assert_eq!(dx.fixed_rows::<3>(POSITION).into_owned(), v);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = build_a(&rand_vec(&mut rng, 3.0));
            assert_eq!(a.rank(1e-10), 6);
        }
    }

    fn stance_feet() -> [Vector3<f64>; 4] {
        [
            Vector3::new(0.18, 0.21, -0.3),
            Vector3::new(0.18, -0.21, -0.3),
            Vector3::new(-0.18, 0.21, -0.3),
            Vector3::new(-0.18, -0.21, -0.3),
        ]
    }

    #[test]
    fn b_matrix_no_contact_is_zero() {
        let p = RobotParams::default();
        let b = build_b(&Vector3::new(0.1, 0.0, 0.4), &stance_feet(), &[false; 4], &p);
        assert_eq!(b, InputMatrix::zeros());
    }

    #[test]
    fn b_matrix_symmetric_stance() {
        let p = RobotParams::default();
        let th = Vector3::new(0.05, -0.02, 0.3);
        let b = build_b(&th, &stance_feet(), &[true; 4], &p);
        let f = 30.0;
        let mut forces = ForceVector::zeros();
        for leg in 0..4 {
            forces[3 * leg + 2] = f;
        }
        let out = b * forces;
        let lin = out.fixed_rows::<3>(VELOCITY).into_owned();
        let expected = rotation_bf_to_wf(&th) * Vector3::new(0.0, 0.0, 4.0 * f / p.mass);
        assert!((lin - expected).amax() < 1e-12);
        assert!(out.fixed_rows::<3>(OMEGA).amax() < 1e-12);
        assert!(out.fixed_rows::<6>(0).amax() == 0.0);
    }

    #[test]
    fn single_leg_moment() {
        let p_foot = Vector3::new(0.2, 0.1, -0.3);
        let mut feet = stance_feet();
        feet[0] = p_foot;
        let f = 7.0;
        let b2 = wrench_map(&feet, &[true, false, false, false]);
        let mut forces = ForceVector::zeros();
        forces[2] = f;
        let w = b2 * forces;
        let expected = Vector3::new(0.1 * f, -0.2 * f, 0.0);
        assert!((w.fixed_rows::<3>(0) - expected).amax() < 1e-14);
    }

    #[test]
    fn switched_b_zeroes_swing_columns_and_matches_unswitched() {
        let p = RobotParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let modes = ModeSet::complete();
        for _ in 0..10 {
            let th = rand_vec(&mut rng, 0.5);
            let feet = [0; 4].map(|_| rand_vec(&mut rng, 0.4));
            for mode in modes.modes() {
                let b = build_b(&th, &feet, &mode.contacts, &p);
                for leg in 0..4 {
                    if !mode.contacts[leg] {
                        assert_eq!(b.fixed_columns::<3>(3 * leg).amax(), 0.0);
                    }
                }
            }
            // unswitched construction: B₁ B₂ with every δ = 1
            let r = rotation_bf_to_wf(&th);
            let mut b2 = SMatrix::<f64, 6, 12>::zeros();
            for leg in 0..4 {
                b2.fixed_view_mut::<3, 3>(0, 3 * leg).copy_from(&skew(&feet[leg]));
                b2.fixed_view_mut::<3, 3>(3, 3 * leg).copy_from(&Matrix3::identity());
            }
            let mut b1 = SMatrix::<f64, 12, 6>::zeros();
            b1.fixed_view_mut::<3, 3>(6, 0).copy_from(&(r * p.trunk_inertia.try_inverse().unwrap()));
            b1.fixed_view_mut::<3, 3>(9, 3).copy_from(&(r / p.mass));
            let full = build_b(&th, &feet, &[true; 4], &p);
            assert!((full - b1 * b2).amax() < 1e-12);
        }
    }

    #[test]
    fn discretize_null_dynamics() {
        let d = discretize(&StateMatrix::zeros(), &InputMatrix::zeros(), &Vector3::zeros(), 0.01);
        assert_eq!(d.ad, StateMatrix::identity());
        assert_eq!(d.bd, InputMatrix::zeros());
        assert_eq!(d.gd, StateVector::zeros());
    }

    #[test]
    fn discretize_euler_step_advances_position() {
        let ts = 0.005;
        let x = TrunkState {
            velocity: Vector3::new(1.0, 0.0, 0.0),
            ..Default::default()
        };
        let d = discretize(&build_a(&x.theta), &InputMatrix::zeros(), &Vector3::zeros(), ts);
        let next = TrunkState::from_vector(&(d.ad * x.to_vector() + d.input(&ForceVector::zeros())));
        assert!((next.position - Vector3::new(0.005, 0.0, 0.0)).amax() < 1e-15);
        assert_eq!(next.velocity, x.velocity);
    }

    #[test]
    fn discretize_step_halving_is_second_order() {
        // Two Ts steps vs one 2Ts step on a smooth ballistic input; the local
        // discrepancy scales with Ts².
        let p = RobotParams::default();
        let g = p.gravity;
        let x0 = TrunkState {
            theta: Vector3::new(0.1, 0.05, 0.0),
            omega: Vector3::new(0.2, -0.1, 0.3),
            velocity: Vector3::new(1.0, 0.0, 0.5),
            ..Default::default()
        }
        .to_vector();
        let gap = |ts: f64| {
            let step = |x: &StateVector, h: f64| {
                let th = x.fixed_rows::<3>(THETA).into_owned();
                let d = discretize(&build_a(&th), &InputMatrix::zeros(), &g, h);
                d.ad * x + d.gd
            };
            let two = step(&step(&x0, ts), ts);
            let one = step(&x0, 2.0 * ts);
            (two - one).amax()
        };
        let e1 = gap(0.01);
        let e2 = gap(0.005);
        assert!(e1 > 0.0);
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn free_dynamics_conserve_rates() {
        let mut x = TrunkState {
            theta: Vector3::new(0.1, 0.2, 0.3),
            omega: Vector3::new(0.3, -0.2, 0.1),
            velocity: Vector3::new(0.5, 0.4, -0.2),
            ..Default::default()
        }
        .to_vector();
        let (w0, v0) = (
            x.fixed_rows::<3>(OMEGA).norm(),
            x.fixed_rows::<3>(VELOCITY).norm(),
        );
        for _ in 0..100 {
            let th = x.fixed_rows::<3>(THETA).into_owned();
            let d = discretize(&build_a(&th), &InputMatrix::zeros(), &Vector3::zeros(), 0.005);
            x = d.ad * x + d.gd;
        }
        assert!((x.fixed_rows::<3>(OMEGA).norm() - w0).abs() < 1e-12);
        assert!((x.fixed_rows::<3>(VELOCITY).norm() - v0).abs() < 1e-12);
    }

    #[test]
    fn c_and_d_structure() {
        let c = build_c(&Vector3::zeros());
        let mut expected = ObservationMatrix::zeros();
        for i in 0..12 {
            expected[(i, i)] = 1.0;
        }
        assert_eq!(c, expected);

        let m = 12.0;
        let d8 = build_d(&[true; 4], m);
        for leg in 0..4 {
            let blk = d8.fixed_view::<3, 3>(12, 3 * leg).into_owned();
            assert_eq!(blk, Matrix3::identity() / m);
        }
        assert_eq!(d8.fixed_rows::<12>(0).amax(), 0.0);
        assert_eq!(build_d(&[false; 4], m), SMatrix::<f64, 15, 12>::zeros());
    }

    #[test]
    fn mode_sets() {
        let t = ModeSet::trot();
        assert_eq!(t.len(), 8);
        assert_eq!(t.get(0).contacts, [false; 4]);
        assert_eq!(t.get(1).contacts, [false, true, true, false]);
        assert_eq!(t.get(3).contacts, [true, false, false, true]);
        assert_eq!(t.get(5).contacts, [true, true, false, true]);
        assert_eq!(t.get(7).contacts, [true; 4]);
        assert_eq!(t.get(7).id, 8);
        assert_eq!(ModeSet::complete().len(), 16);
        assert!(ModeSet::new(&[[true; 4], [true; 4]]).is_err());
        assert!(ModeSet::new(&[]).is_err());
    }

    #[test]
    fn state_vector_round_trip() {
        let s = TrunkState {
            theta: Vector3::new(1.0, 2.0, 3.0),
            position: Vector3::new(4.0, 5.0, 6.0),
            omega: Vector3::new(7.0, 8.0, 9.0),
            velocity: Vector3::new(10.0, 11.0, 12.0),
        };
        let x = s.to_vector();
        assert_eq!(x[0], 1.0);
        assert_eq!(x[11], 12.0);
        assert_eq!(TrunkState::from_vector(&x), s);
    }
}
