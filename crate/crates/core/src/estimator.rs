//! Tick-by-tick trunk estimators built on the switched model: the IMM contact
//! estimator and a single filter that follows an externally given contact
//! schedule.

use nalgebra::{SymmetricEigen, Vector3};

use crate::dynamics::{
    build_a, build_b, build_c, build_d, discretize, rotation_bf_to_wf, ContactMode, ForceEstimate,
    ModeSet, StateMatrix, StateVector, InputMatrix, OMEGA, POSITION, THETA, VELOCITY,
};
use crate::error::{Error, Result};
use crate::filter::{predict, update, CovarianceForm, Gaussian};
use crate::imm::{contact_probabilities, BiasConfig, FilterBank, ModeModel, TransitionMatrix};
use crate::measurements::{MeasurementAssembler, MeasurementBundle, NoiseConfig, SensorFrame};
use crate::model::{LegIndex, LegState, RobotParams};

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    /// Sample period, s.
    pub ts: f64,
    pub modes: ModeSet,
    pub transition: TransitionMatrix,
    pub noise: NoiseConfig,
    pub bias: BiasConfig,
    pub covariance_form: CovarianceForm,
    /// Initial covariance as a multiple of `Q`.
    pub init_cov_scale: f64,
    /// Track probability, symmetry and PSD invariants on every tick.
    pub check_invariants: bool,
}

impl EstimatorConfig {
    /// Trot mode set and transition matrix with every self-transition at 0.8.
    pub fn trot(ts: f64) -> Self {
        EstimatorConfig {
            ts,
            modes: ModeSet::trot(),
            transition: TransitionMatrix::trot(0.8, 0.8, 0.8, 0.8).expect("valid defaults"),
            noise: NoiseConfig::default(),
            bias: BiasConfig::default(),
            covariance_form: CovarianceForm::Joseph,
            init_cov_scale: 10.0,
            check_invariants: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::config(format!("sample period must be > 0, got {}", self.ts)));
        }
        if self.modes.len() != self.transition.len() {
            return Err(Error::LengthMismatch {
                what: "transition matrix vs mode set",
                left: self.transition.len(),
                right: self.modes.len(),
            });
        }
        if !(self.init_cov_scale > 0.0) {
            return Err(Error::config("init_cov_scale must be > 0"));
        }
        self.noise.validate()?;
        self.bias.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub t: f64,
    pub state: StateVector,
    pub contact: [f64; 4],
    pub mode_probabilities: Vec<f64>,
}

/// Recovers per-leg forces, holding the last valid value through
/// singular configurations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForceTracker {
    last: [Vector3<f64>; 4],
}

impl ForceTracker {
    pub fn recover(&mut self, params: &RobotParams, legs: &[LegState; 4]) -> ForceEstimate {
        let mut out = ForceEstimate::default();
        for leg in LegIndex::ALL {
            let i = leg.index();
            match params
                .legs
                .estimate_contact_force(leg, &legs[i].q, &legs[i].tau, params.force_convention)
            {
                Ok(rec) => {
                    self.last[i] = rec.force;
                    out.forces[i] = rec.force;
                }
                Err(_) => {
                    out.forces[i] = self.last[i];
                    out.valid[i] = false;
                }
            }
        }
        out
    }
}

/// Worst-case invariant violations seen so far.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvariantReport {
    pub ticks: usize,
    /// `max |Σμ − 1|`
    pub probability_sum_error: f64,
    /// `max ‖P − Pᵀ‖_max` over mode and combined covariances.
    pub asymmetry: f64,
    pub min_eigenvalue: f64,
    pub min_probability: f64,
}

impl Default for InvariantReport {
    fn default() -> Self {
        InvariantReport {
            ticks: 0,
            probability_sum_error: 0.0,
            asymmetry: 0.0,
            min_eigenvalue: f64::INFINITY,
            min_probability: f64::INFINITY,
        }
    }
}

impl InvariantReport {
    pub fn observe(&mut self, mu: &[f64], covariances: impl IntoIterator<Item = StateMatrix>) {
        self.ticks += 1;
        let sum: f64 = mu.iter().sum();
        self.probability_sum_error = self.probability_sum_error.max((sum - 1.0).abs());
        self.min_probability = mu.iter().copied().fold(self.min_probability, f64::min);
        for p in covariances {
            self.asymmetry = self.asymmetry.max((p - p.transpose()).amax());
            let eig = SymmetricEigen::new(p).eigenvalues.min();
            self.min_eigenvalue = self.min_eigenvalue.min(eig);
        }
    }

    pub fn merge(&mut self, other: &InvariantReport) {
        self.ticks += other.ticks;
        self.probability_sum_error = self.probability_sum_error.max(other.probability_sum_error);
        self.asymmetry = self.asymmetry.max(other.asymmetry);
        self.min_eigenvalue = self.min_eigenvalue.min(other.min_eigenvalue);
        self.min_probability = self.min_probability.min(other.min_probability);
    }

    pub fn holds(&self) -> bool {
        self.probability_sum_error <= 1e-9
            && self.asymmetry <= 1e-12
            && self.min_eigenvalue >= -1e-10
            && self.min_probability >= 0.0
    }
}

/// Quantities shared by every mode on one tick.
struct TickModel<'a> {
    params: &'a RobotParams,
    ts: f64,
    theta: Vector3<f64>,
    feet: [Vector3<f64>; 4],
    forces: ForceEstimate,
    forces_wf: [Vector3<f64>; 4],
    transition: nalgebra::SMatrix<f64, 12, 12>,
    observation: nalgebra::SMatrix<f64, 15, 12>,
    process_noise: nalgebra::SMatrix<f64, 12, 12>,
    measurement_noise: nalgebra::SMatrix<f64, 15, 15>,
}

impl<'a> TickModel<'a> {
    fn new(
        params: &'a RobotParams,
        cfg: &EstimatorConfig,
        theta: Vector3<f64>,
        bundle: &MeasurementBundle,
        forces: ForceEstimate,
    ) -> Self {
        let feet = LegIndex::ALL.map(|leg| {
            params
                .legs
                .forward_kinematics(leg, &bundle.raw.legs[leg.index()].q)
        });
        let r = rotation_bf_to_wf(&theta);
        let ad = discretize(&build_a(&theta), &InputMatrix::zeros(), &params.gravity, cfg.ts).ad;
        TickModel {
            params,
            ts: cfg.ts,
            theta,
            feet,
            forces,
            forces_wf: forces.forces.map(|f| r * f),
            transition: ad,
            observation: build_c(&theta),
            process_noise: cfg.noise.process_noise(),
            measurement_noise: bundle.measurement_noise(&cfg.noise),
        }
    }

    fn mode(&self, mode: &ContactMode, bias: Option<&BiasConfig>) -> ModeModel<12, 15> {
        let b = build_b(&self.theta, &self.feet, &mode.contacts, self.params);
        let d = discretize(&nalgebra::SMatrix::zeros(), &b, &self.params.gravity, self.ts);
        let f = self.forces.stacked();
        ModeModel {
            transition: self.transition,
            input: d.input(&f),
            process_noise: self.process_noise,
            observation: self.observation,
            feedthrough: build_d(&mode.contacts, self.params.mass) * f,
            measurement_noise: self.measurement_noise,
            log_bias: bias.map_or(0.0, |b| -b.penalty(mode, &self.forces_wf)),
        }
    }
}

fn initial_estimate(params: &RobotParams, cfg: &EstimatorConfig, bundle: &MeasurementBundle) -> Gaussian<12> {
    let y = &bundle.y;
    let theta: Vector3<f64> = y.fixed_rows::<3>(0).into_owned();
    let mut x = StateVector::zeros();
    x.fixed_rows_mut::<3>(THETA).copy_from(&theta);
    x.fixed_rows_mut::<3>(POSITION).copy_from(&y.fixed_rows::<3>(3));
    x.fixed_rows_mut::<3>(OMEGA)
        .copy_from(&(rotation_bf_to_wf(&theta) * y.fixed_rows::<3>(6)));
    x.fixed_rows_mut::<3>(VELOCITY).copy_from(&y.fixed_rows::<3>(9));
    let _ = params;
    Gaussian::new(x, cfg.noise.process_noise() * cfg.init_cov_scale)
}

/// Simultaneous contact and trunk-state estimator.
#[derive(Clone, Debug)]
pub struct ImmEstimator {
    params: RobotParams,
    cfg: EstimatorConfig,
    bank: Option<FilterBank<12>>,
    assembler: MeasurementAssembler,
    forces: ForceTracker,
    contact: [f64; 4],
    invariants: InvariantReport,
}

impl ImmEstimator {
    pub fn new(params: RobotParams, cfg: EstimatorConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let uniform = vec![1.0 / cfg.modes.len() as f64; cfg.modes.len()];
        let contact = contact_probabilities(&uniform, &cfg.modes);
        Ok(ImmEstimator {
            params,
            cfg,
            bank: None,
            assembler: MeasurementAssembler::new(),
            forces: ForceTracker::default(),
            contact,
            invariants: InvariantReport::default(),
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn bank(&self) -> Option<&FilterBank<12>> {
        self.bank.as_ref()
    }

    pub fn contact_probabilities(&self) -> [f64; 4] {
        self.contact
    }

    pub fn invariants(&self) -> &InvariantReport {
        &self.invariants
    }

    pub fn step(&mut self, frame: &SensorFrame) -> Result<Estimate> {
        let forces = self.forces.recover(&self.params, &frame.legs);
        let theta_hat = match &self.bank {
            Some(b) => b.combined().mean.fixed_rows::<3>(THETA).into_owned(),
            None => frame.theta_bar,
        };
        let bundle = self
            .assembler
            .assemble(&self.params.legs, &self.cfg.noise, frame, &self.contact, &theta_hat)?;

        let bank = match &mut self.bank {
            None => {
                let init = initial_estimate(&self.params, &self.cfg, &bundle);
                self.bank = Some(
                    FilterBank::new(init, self.cfg.transition.clone())
                        .with_covariance_form(self.cfg.covariance_form),
                );
                self.bank.as_ref().expect("just set")
            }
            Some(bank) => {
                let tick = TickModel::new(&self.params, &self.cfg, theta_hat, &bundle, forces);
                let models: Vec<_> = self
                    .cfg
                    .modes
                    .modes()
                    .iter()
                    .map(|m| tick.mode(m, Some(&self.cfg.bias)))
                    .collect();
                bank.step(&models, &bundle.y)?;
                bank
            }
        };
        self.contact = contact_probabilities(bank.mode_probabilities(), &self.cfg.modes);
        if self.cfg.check_invariants {
            let covs = bank
                .estimates()
                .iter()
                .map(|g| g.cov)
                .chain(std::iter::once(bank.combined().cov));
            self.invariants.observe(bank.mode_probabilities(), covs);
        }
        Ok(Estimate {
            t: frame.t,
            state: bank.combined().mean,
            contact: self.contact,
            mode_probabilities: bank.mode_probabilities().to_vec(),
        })
    }
}

/// Single Kalman filter whose contact mode is supplied on every tick, as by a
/// gait controller. Pseudo measurements weight the scheduled stance legs.
#[derive(Clone, Debug)]
pub struct ScheduledEstimator {
    params: RobotParams,
    cfg: EstimatorConfig,
    estimate: Option<Gaussian<12>>,
    assembler: MeasurementAssembler,
    forces: ForceTracker,
    invariants: InvariantReport,
}

impl ScheduledEstimator {
    pub fn new(params: RobotParams, cfg: EstimatorConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        Ok(ScheduledEstimator {
            params,
            cfg,
            estimate: None,
            assembler: MeasurementAssembler::new(),
            forces: ForceTracker::default(),
            invariants: InvariantReport::default(),
        })
    }

    pub fn invariants(&self) -> &InvariantReport {
        &self.invariants
    }

    pub fn estimate(&self) -> Option<&Gaussian<12>> {
        self.estimate.as_ref()
    }

    pub fn step(&mut self, frame: &SensorFrame, contacts: [bool; 4]) -> Result<Estimate> {
        let forces = self.forces.recover(&self.params, &frame.legs);
        let p = contacts.map(|c| if c { 1.0 } else { 0.0 });
        let theta_hat = match &self.estimate {
            Some(g) => g.mean.fixed_rows::<3>(THETA).into_owned(),
            None => frame.theta_bar,
        };
        let bundle = self
            .assembler
            .assemble(&self.params.legs, &self.cfg.noise, frame, &p, &theta_hat)?;
        let next = match &self.estimate {
            None => initial_estimate(&self.params, &self.cfg, &bundle),
            Some(prior) => {
                let tick = TickModel::new(&self.params, &self.cfg, theta_hat, &bundle, forces);
                let model = tick.mode(&ContactMode { contacts, id: 0 }, None);
                let pred = predict(prior, &model.transition, &model.input, &model.process_noise)?;
                update(
                    &pred,
                    &bundle.y,
                    &model.observation,
                    &model.feedthrough,
                    &model.measurement_noise,
                    self.cfg.covariance_form,
                )?
                .posterior
            }
        };
        if self.cfg.check_invariants {
            self.invariants.observe(&[1.0], [next.cov]);
        }
        let mode_probabilities = self
            .cfg
            .modes
            .modes()
            .iter()
            .map(|m| if m.contacts == contacts { 1.0 } else { 0.0 })
            .collect();
        let state = next.mean;
        self.estimate = Some(next);
        Ok(Estimate {
            t: frame.t,
            state,
            contact: p,
            mode_probabilities,
        })
    }
}
