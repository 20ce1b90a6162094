//! Scenario runs: simulate, estimate with the IMM and the scheduled baseline,
//! score against the truth.
//!
//! Stages talk to each other only through the files in the output directory,
//! so `estimate` and `run` on the same trace give the same numbers, and the
//! metrics can be recomputed from the CSVs alone.

pub mod config;
pub mod csvio;
pub mod metrics;

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimator::{Estimate, EstimatorConfig, ImmEstimator, InvariantReport, ScheduledEstimator};
use crate::measurements::SensorFrame;
use crate::model::RobotParams;
use crate::sim::{run_scenario, SimTrace};

pub use config::{EstimatorChoice, FilterSettings, ModeSelection, RunConfig};
pub use metrics::{compute_metrics, Metrics, TimingSummary};

pub const SENSORS_FILE: &str = "sensors.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const IMM_FILE: &str = "estimates_imm.csv";
pub const BASELINE_FILE: &str = "estimates_baseline.csv";
pub const METRICS_FILE: &str = "metrics.txt";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";

/// Output of one estimator over a whole trace.
#[derive(Clone, Debug, Default)]
pub struct EstimatorRun {
    pub estimates: Vec<Estimate>,
    /// Wall-clock seconds per tick.
    pub timings: Vec<f64>,
    pub invariants: InvariantReport,
}

pub fn run_imm(sensors: &[SensorFrame], params: &RobotParams, cfg: &EstimatorConfig) -> Result<EstimatorRun> {
    let mut est = ImmEstimator::new(params.clone(), cfg.clone())?;
    let mut out = EstimatorRun {
        estimates: Vec::with_capacity(sensors.len()),
        timings: Vec::with_capacity(sensors.len()),
        invariants: InvariantReport::default(),
    };
    for frame in sensors {
        let start = Instant::now();
        let e = est.step(frame)?;
        out.timings.push(start.elapsed().as_secs_f64());
        out.estimates.push(e);
    }
    out.invariants = *est.invariants();
    Ok(out)
}

/// The scheduled-mode Kalman filter, fed the commanded contact flags.
pub fn run_baseline(
    sensors: &[SensorFrame],
    commanded: &[[bool; 4]],
    params: &RobotParams,
    cfg: &EstimatorConfig,
) -> Result<EstimatorRun> {
    if sensors.len() != commanded.len() {
        return Err(Error::LengthMismatch {
            what: "sensor frames vs commanded schedule",
            left: sensors.len(),
            right: commanded.len(),
        });
    }
    let mut est = ScheduledEstimator::new(params.clone(), cfg.clone())?;
    let mut out = EstimatorRun {
        estimates: Vec::with_capacity(sensors.len()),
        timings: Vec::with_capacity(sensors.len()),
        invariants: InvariantReport::default(),
    };
    for (frame, flags) in sensors.iter().zip(commanded) {
        let start = Instant::now();
        let e = est.step(frame, *flags)?;
        out.timings.push(start.elapsed().as_secs_f64());
        out.estimates.push(e);
    }
    out.invariants = *est.invariants();
    Ok(out)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Simulates the scenario and writes sensors, truth and schedule CSVs.
pub fn simulate_to(cfg: &RunConfig, dir: &Path) -> Result<SimTrace> {
    cfg.validate()?;
    let trace = run_scenario(&cfg.sim, &cfg.robot)?;
    ensure_dir(dir)?;
    csvio::write_sensors(&dir.join(SENSORS_FILE), &trace.sensors)?;
    csvio::write_truth(&dir.join(TRUTH_FILE), &trace.truth)?;
    let t: Vec<f64> = trace.sensors.iter().map(|s| s.t).collect();
    csvio::write_schedule(&dir.join(SCHEDULE_FILE), &t, &trace.commanded)?;
    Ok(trace)
}

/// Estimator outputs of one directory.
#[derive(Clone, Debug, Default)]
pub struct EstimateOutputs {
    pub imm: Option<EstimatorRun>,
    pub baseline: Option<EstimatorRun>,
}

impl EstimateOutputs {
    /// Timing and invariant lines; these vary with the machine and are kept
    /// out of the metrics file.
    pub fn diagnostics(&self) -> String {
        let mut s = String::new();
        for (name, run) in [("imm", &self.imm), ("baseline", &self.baseline)] {
            if let Some(r) = run {
                s += &TimingSummary::from_seconds(&r.timings).summary(name);
                let inv = &r.invariants;
                s += &format!(
                    "{name}.invariant_ticks = {}\n{name}.probability_sum_error = {:.3e}\n{name}.max_asymmetry = {:.3e}\n{name}.min_eigenvalue = {:.6e}\n",
                    inv.ticks, inv.probability_sum_error, inv.asymmetry, inv.min_eigenvalue
                );
            }
        }
        s
    }
}

/// Runs the selected estimators on the sensor (and schedule) CSVs in `dir`
/// and writes their estimate CSVs and the diagnostics file.
pub fn estimate_dir(cfg: &RunConfig, dir: &Path) -> Result<EstimateOutputs> {
    let ecfg = cfg.estimator_config()?;
    let sensors = csvio::read_sensors(&dir.join(SENSORS_FILE))?;
    let modes = ecfg.modes.len();
    let mut out = EstimateOutputs::default();
    if cfg.estimators.imm() {
        let run = run_imm(&sensors, &cfg.robot, &ecfg)?;
        csvio::write_estimates(&dir.join(IMM_FILE), &run.estimates, modes)?;
        out.imm = Some(run);
    }
    if cfg.estimators.baseline() {
        let (_, commanded) = csvio::read_schedule(&dir.join(SCHEDULE_FILE))?;
        let run = run_baseline(&sensors, &commanded, &cfg.robot, &ecfg)?;
        csvio::write_estimates(&dir.join(BASELINE_FILE), &run.estimates, modes)?;
        out.baseline = Some(run);
    }
    // drop estimates of a deselected filter left by an earlier run
    for (selected, file) in [(cfg.estimators.imm(), IMM_FILE), (cfg.estimators.baseline(), BASELINE_FILE)] {
        let path = dir.join(file);
        if !selected && path.exists() {
            std::fs::remove_file(&path).map_err(|e| Error::io(path, e))?;
        }
    }
    let diag = dir.join(DIAGNOSTICS_FILE);
    std::fs::write(&diag, out.diagnostics()).map_err(|e| Error::io(diag, e))?;
    Ok(out)
}

/// Metrics of every estimate CSV present in `dir`, keyed `imm` / `baseline`.
pub fn metrics_dir(dir: &Path, ts: f64) -> Result<Vec<(&'static str, Metrics)>> {
    let truth = csvio::read_truth(&dir.join(TRUTH_FILE))?;
    let mut out = Vec::new();
    for (name, file) in [("imm", IMM_FILE), ("baseline", BASELINE_FILE)] {
        let path = dir.join(file);
        if path.exists() {
            let est = csvio::read_estimates(&path)?;
            out.push((name, compute_metrics(&truth, &est, ts)?));
        }
    }
    Ok(out)
}

/// The metrics file: one block per estimator plus IMM/baseline ratios when
/// both are present.
pub fn metrics_summary(metrics: &[(&str, Metrics)]) -> String {
    let mut s = String::new();
    for (name, m) in metrics {
        s += &m.summary(name);
    }
    let find = |n: &str| metrics.iter().find(|(k, _)| *k == n).map(|(_, m)| m);
    if let (Some(i), Some(b)) = (find("imm"), find("baseline")) {
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
        s += &format!("ratio.full_rmse = {:.8e}\n", ratio(i.full_rmse, b.full_rmse));
        s += &format!("ratio.vertical_rmse = {:.8e}\n", ratio(i.vertical_rmse_cm, b.vertical_rmse_cm));
        s += &format!("ratio.velocity_rmse = {:.8e}\n", ratio(i.velocity_rmse, b.velocity_rmse));
    }
    s
}

/// Paths written by [`run`].
#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub dir: PathBuf,
    pub metrics: Vec<(&'static str, Metrics)>,
    pub estimates: EstimateOutputs,
}

/// Simulate, estimate and score into `dir`.
pub fn run(cfg: &RunConfig, dir: &Path) -> Result<RunOutputs> {
    simulate_to(cfg, dir)?;
    let estimates = estimate_dir(cfg, dir)?;
    let metrics = metrics_dir(dir, cfg.sim.ts())?;
    let path = dir.join(METRICS_FILE);
    std::fs::write(&path, metrics_summary(&metrics)).map_err(|e| Error::io(path, e))?;
    Ok(RunOutputs {
        dir: dir.to_path_buf(),
        metrics,
        estimates,
    })
}
