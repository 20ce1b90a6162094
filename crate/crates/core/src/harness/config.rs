//! Scenario files.
//!
//! A scenario is a TOML document with optional sections `[sim]`, `[gait]`,
//! `[sensors]`, `[robot]`, `[filter]` and any number of `[[events]]`. Every
//! key has a default, so an empty file is the 10 s trot scenario. Unknown keys
//! are rejected.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, SVector, Vector3};
use serde::Deserialize;

use crate::dynamics::ModeSet;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::filter::CovarianceForm;
use crate::imm::{BiasConfig, TransitionMatrix};
use crate::measurements::NoiseConfig;
use crate::model::{ForceConvention, LegGeometry, LegIndex, RobotParams};
use crate::sim::{ControllerGains, EarlyContactEvent, GaitKind, SensorNoise, SimConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EstimatorChoice {
    Imm,
    Baseline,
    #[default]
    Both,
}

impl EstimatorChoice {
    pub fn imm(self) -> bool {
        self != EstimatorChoice::Baseline
    }

    pub fn baseline(self) -> bool {
        self != EstimatorChoice::Imm
    }
}

impl FromStr for EstimatorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imm" => Ok(EstimatorChoice::Imm),
            "baseline" => Ok(EstimatorChoice::Baseline),
            "both" => Ok(EstimatorChoice::Both),
            other => Err(Error::config(format!("unknown estimator selection `{other}`"))),
        }
    }
}

/// Which contact modes the IMM carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModeSelection {
    /// The eight trot modes with the trot transition matrix.
    #[default]
    Trot8,
    /// All sixteen contact patterns with uniform switching.
    Complete16,
    /// Full stance only; the IMM reduces to one Kalman filter.
    Single,
}

impl FromStr for ModeSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trot8" => Ok(ModeSelection::Trot8),
            "complete16" => Ok(ModeSelection::Complete16),
            "single" => Ok(ModeSelection::Single),
            other => Err(Error::config(format!("unknown mode set `{other}`"))),
        }
    }
}

/// Filter settings that do not depend on the sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSettings {
    pub modes: ModeSelection,
    /// `π₀..π₃` for the trot matrix; `pi[0]` doubles as the stay probability
    /// of the 16-mode set.
    pub pi: [f64; 4],
    pub noise: NoiseConfig,
    pub bias: BiasConfig,
    pub covariance_form: CovarianceForm,
    pub init_cov_scale: f64,
    pub check_invariants: bool,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            modes: ModeSelection::Trot8,
            pi: [0.8; 4],
            noise: NoiseConfig::default(),
            bias: BiasConfig::default(),
            covariance_form: CovarianceForm::Joseph,
            init_cov_scale: 10.0,
            check_invariants: true,
        }
    }
}

impl FilterSettings {
    pub fn estimator_config(&self, ts: f64) -> Result<EstimatorConfig> {
        let [pi0, pi1, pi2, pi3] = self.pi;
        let (modes, transition) = match self.modes {
            ModeSelection::Trot8 => (ModeSet::trot(), TransitionMatrix::trot(pi0, pi1, pi2, pi3)?),
            ModeSelection::Complete16 => (ModeSet::complete(), TransitionMatrix::uniform_switching(16, pi0)?),
            ModeSelection::Single => (ModeSet::single([true; 4]), TransitionMatrix::uniform_switching(1, 1.0)?),
        };
        let cfg = EstimatorConfig {
            ts,
            modes,
            transition,
            noise: self.noise.clone(),
            bias: self.bias,
            covariance_form: self.covariance_form,
            init_cov_scale: self.init_cov_scale,
            check_invariants: self.check_invariants,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything a run needs besides the output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub robot: RobotParams,
    pub filter: FilterSettings,
    pub estimators: EstimatorChoice,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sim: SimConfig::default(),
            robot: RobotParams::default(),
            filter: FilterSettings::default(),
            estimators: EstimatorChoice::Both,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::config(e.message().to_string()))?;
        file.into_config()
    }

    pub fn estimator_config(&self) -> Result<EstimatorConfig> {
        self.filter.estimator_config(self.sim.ts())
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.sim.schedule()?;
        self.robot.validate()?;
        self.estimator_config().map(|_| ())
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    sim: SimSection,
    #[serde(default)]
    gait: GaitSection,
    #[serde(default)]
    sensors: SensorSection,
    #[serde(default)]
    robot: RobotSection,
    #[serde(default)]
    filter: FilterSection,
    #[serde(default)]
    events: Vec<EventSection>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SimSection {
    duration: Option<f64>,
    rate: Option<f64>,
    seed: Option<u64>,
    speed: Option<f64>,
    height: Option<f64>,
    bounce: Option<f64>,
    swing_height: Option<f64>,
    swing_leg_mass: Option<f64>,
    schedule_offset: Option<f64>,
    exact_euler_rates: Option<bool>,
    model_mismatch: Option<f64>,
    kp_pos: Option<f64>,
    kd_pos: Option<f64>,
    kp_att: Option<f64>,
    kd_att: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GaitSection {
    kind: Option<String>,
    period: Option<f64>,
    duty: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SensorSection {
    theta: Option<f64>,
    omega: Option<f64>,
    accel: Option<f64>,
    q: Option<f64>,
    q_dot: Option<f64>,
    tau: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RobotSection {
    mass: Option<f64>,
    inertia: Option<[[f64; 3]; 3]>,
    gravity: Option<[f64; 3]>,
    hip_offsets: Option<[[f64; 3]; 4]>,
    l_hip: Option<f64>,
    l_thigh: Option<f64>,
    l_calf: Option<f64>,
    force_convention: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FilterSection {
    estimators: Option<String>,
    modes: Option<String>,
    pi: Option<[f64; 4]>,
    q_diag: Option<Vec<f64>>,
    r_diag: Option<Vec<f64>>,
    threshold: Option<f64>,
    flight_inflation: Option<f64>,
    c_force: Option<f64>,
    friction: Option<f64>,
    covariance_form: Option<String>,
    init_cov_scale: Option<f64>,
    check_invariants: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EventSection {
    leg: String,
    time: f64,
    advance: f64,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn fixed<const D: usize>(name: &str, v: Vec<f64>) -> Result<SVector<f64, D>> {
    if v.len() != D {
        return Err(Error::config(format!("{name} needs {D} entries, got {}", v.len())));
    }
    Ok(SVector::from_vec(v))
}

impl ScenarioFile {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();

        let sim = &mut cfg.sim;
        let s = self.sim;
        set(&mut sim.duration, s.duration);
        set(&mut sim.rate, s.rate);
        set(&mut sim.seed, s.seed);
        set(&mut sim.speed, s.speed);
        set(&mut sim.height, s.height);
        set(&mut sim.bounce, s.bounce);
        set(&mut sim.swing_height, s.swing_height);
        set(&mut sim.swing_leg_mass, s.swing_leg_mass);
        set(&mut sim.schedule_offset, s.schedule_offset);
        set(&mut sim.exact_euler_rates, s.exact_euler_rates);
        set(&mut sim.model_mismatch, s.model_mismatch);
        let gains: &mut ControllerGains = &mut sim.gains;
        set(&mut gains.kp_pos, s.kp_pos);
        set(&mut gains.kd_pos, s.kd_pos);
        set(&mut gains.kp_att, s.kp_att);
        set(&mut gains.kd_att, s.kd_att);

        if let Some(kind) = self.gait.kind {
            sim.gait = kind.parse()?;
            sim.duty = sim.gait.default_duty();
            if sim.gait == GaitKind::Stand {
                sim.speed = s.speed.unwrap_or(0.0);
            }
        }
        set(&mut sim.period, self.gait.period);
        set(&mut sim.duty, self.gait.duty);

        let n: &mut SensorNoise = &mut sim.noise;
        let ns = self.sensors;
        set(&mut n.theta, ns.theta);
        set(&mut n.omega, ns.omega);
        set(&mut n.accel, ns.accel);
        set(&mut n.q, ns.q);
        set(&mut n.q_dot, ns.q_dot);
        set(&mut n.tau, ns.tau);

        sim.events = self
            .events
            .into_iter()
            .map(|e| {
                Ok(EarlyContactEvent {
                    leg: LegIndex::from_str(&e.leg)?,
                    time: e.time,
                    advance: e.advance,
                })
            })
            .collect::<Result<_>>()?;

        let r = self.robot;
        let robot = &mut cfg.robot;
        set(&mut robot.mass, r.mass);
        if let Some(i) = r.inertia {
            robot.trunk_inertia = Matrix3::from_fn(|a, b| i[a][b]);
        }
        if let Some(g) = r.gravity {
            robot.gravity = Vector3::from(g);
        }
        let legs: &mut LegGeometry = &mut robot.legs;
        if let Some(h) = r.hip_offsets {
            legs.hip_offsets = h.map(Vector3::from);
        }
        set(&mut legs.l_hip, r.l_hip);
        set(&mut legs.l_thigh, r.l_thigh);
        set(&mut legs.l_calf, r.l_calf);
        if let Some(c) = r.force_convention {
            robot.force_convention = match c.as_str() {
                "inverse" => ForceConvention::Inverse,
                "transpose" => ForceConvention::Transpose,
                other => return Err(Error::config(format!("unknown force convention `{other}`"))),
            };
        }

        let f = self.filter;
        if let Some(e) = f.estimators {
            cfg.estimators = e.parse()?;
        }
        let filter = &mut cfg.filter;
        if let Some(m) = f.modes {
            filter.modes = m.parse()?;
        }
        set(&mut filter.pi, f.pi);
        if let Some(q) = f.q_diag {
            filter.noise.q_diag = fixed("q_diag", q)?;
        }
        if let Some(r) = f.r_diag {
            filter.noise.r_diag = fixed("r_diag", r)?;
        }
        set(&mut filter.noise.threshold, f.threshold);
        set(&mut filter.noise.flight_inflation, f.flight_inflation);
        set(&mut filter.bias.c_force, f.c_force);
        set(&mut filter.bias.friction_nu, f.friction);
        if let Some(c) = f.covariance_form {
            filter.covariance_form = match c.as_str() {
                "joseph" => CovarianceForm::Joseph,
                "simple" => CovarianceForm::Simple,
                other => return Err(Error::config(format!("unknown covariance form `{other}`"))),
            };
        }
        set(&mut filter.init_cov_scale, f.init_cov_scale);
        set(&mut filter.check_invariants, f.check_invariants);

        cfg.validate()?;
        Ok(cfg)
    }
}
