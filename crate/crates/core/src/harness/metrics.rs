//! Tracking and detection metrics.
//!
//! Errors are taken against the truth with the horizontal position expressed
//! relative to the stance-foothold centroid, which is what the leg-odometry
//! position measurement observes. Block RMSEs use the Euclidean norm of the
//! block error; the full-state RMSE is the same over all twelve entries with
//! no unit weighting.

use std::fmt::Write as _;

use crate::dynamics::{StateVector, OMEGA, POSITION, THETA, VELOCITY};
use crate::error::{Error, Result};
use crate::estimator::Estimate;
use crate::model::LegIndex;
use crate::sim::TruthSample;

/// Contact-probability level that counts as a detection.
pub const DETECTION_THRESHOLD: f64 = 0.6;
pub const SWING_BAND: f64 = 0.4;
pub const STANCE_BAND: f64 = 0.9;

/// One true contact change and how long the estimator took to follow it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionEvent {
    pub leg: LegIndex,
    pub tick: usize,
    pub touchdown: bool,
    /// Ticks until the probability crossed the threshold, or `None` if the
    /// leg changed state again first.
    pub latency: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LatencySummary {
    pub events: usize,
    pub detected: usize,
    pub mean_ticks: f64,
    pub median_ticks: f64,
    pub max_ticks: usize,
    /// Share of all events detected within four ticks.
    pub within_4: f64,
}

impl LatencySummary {
    fn from_events<'a>(events: impl Iterator<Item = &'a DetectionEvent>) -> Self {
        let mut total = 0;
        let mut lat: Vec<usize> = Vec::new();
        for e in events {
            total += 1;
            lat.extend(e.latency);
        }
        lat.sort_unstable();
        let fast = lat.iter().filter(|&&l| l <= 4).count();
        LatencySummary {
            events: total,
            detected: lat.len(),
            mean_ticks: if lat.is_empty() {
                0.0
            } else {
                lat.iter().sum::<usize>() as f64 / lat.len() as f64
            },
            median_ticks: median_sorted(&lat.iter().map(|&l| l as f64).collect::<Vec<_>>()),
            max_ticks: lat.last().copied().unwrap_or(0),
            within_4: if total == 0 { 1.0 } else { fast as f64 / total as f64 },
        }
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub ticks: usize,
    pub ts: f64,
    pub full_rmse: f64,
    pub attitude_rmse: f64,
    pub position_rmse: f64,
    pub omega_rmse: f64,
    pub velocity_rmse: f64,
    pub vertical_rmse_cm: f64,
    pub vertical_max_cm: f64,
    /// Share of swing ticks (over all legs) with `p < 0.4`.
    pub swing_band: f64,
    /// Share of stance ticks with `p > 0.9`.
    pub stance_band: f64,
    pub detections: Vec<DetectionEvent>,
    pub touchdown: LatencySummary,
    pub liftoff: LatencySummary,
}

/// Error of an estimate against a truth sample.
pub fn state_error(truth: &TruthSample, estimate: &StateVector) -> StateVector {
    let mut x = truth.state.to_vector();
    x[POSITION] -= truth.origin.x;
    x[POSITION + 1] -= truth.origin.y;
    x[POSITION + 2] -= truth.origin.z;
    estimate - x
}

/// Contact changes of every leg and the detection latency of each.
pub fn detection_events(truth: &[TruthSample], estimates: &[Estimate]) -> Vec<DetectionEvent> {
    let mut out = Vec::new();
    for leg in LegIndex::ALL {
        let i = leg.index();
        let changes: Vec<usize> = (1..truth.len())
            .filter(|&n| truth[n].contacts[i] != truth[n - 1].contacts[i])
            .collect();
        for (k, &n) in changes.iter().enumerate() {
            let touchdown = truth[n].contacts[i];
            let end = changes.get(k + 1).copied().unwrap_or(truth.len());
            let latency = (n..end)
                .find(|&m| (estimates[m].contact[i] >= DETECTION_THRESHOLD) == touchdown)
                .map(|m| m - n);
            out.push(DetectionEvent {
                leg,
                tick: n,
                touchdown,
                latency,
            });
        }
    }
    out.sort_by_key(|e| (e.tick, e.leg));
    out
}

pub fn compute_metrics(truth: &[TruthSample], estimates: &[Estimate], ts: f64) -> Result<Metrics> {
    if truth.len() != estimates.len() {
        return Err(Error::LengthMismatch {
            what: "truth vs estimates",
            left: truth.len(),
            right: estimates.len(),
        });
    }
    let n = truth.len();
    let mut m = Metrics {
        ticks: n,
        ts,
        ..Default::default()
    };
    if n == 0 {
        m.swing_band = 1.0;
        m.stance_band = 1.0;
        m.touchdown.within_4 = 1.0;
        m.liftoff.within_4 = 1.0;
        return Ok(m);
    }
    let mut sums = [0.0; 6];
    let (mut swing, mut swing_ok, mut stance, mut stance_ok) = (0usize, 0usize, 0usize, 0usize);
    for (t, e) in truth.iter().zip(estimates) {
        let d = state_error(t, &e.state);
        sums[0] += d.norm_squared();
        for (k, at) in [THETA, POSITION, OMEGA, VELOCITY].into_iter().enumerate() {
            sums[1 + k] += d.fixed_rows::<3>(at).norm_squared();
        }
        let dz = d[POSITION + 2];
        sums[5] += dz * dz;
        m.vertical_max_cm = m.vertical_max_cm.max(dz.abs() * 100.0);
        for i in 0..4 {
            let p = e.contact[i];
            if t.contacts[i] {
                stance += 1;
                stance_ok += usize::from(p > STANCE_BAND);
            } else {
                swing += 1;
                swing_ok += usize::from(p < SWING_BAND);
            }
        }
    }
    let rms = |s: f64| (s / n as f64).sqrt();
    m.full_rmse = rms(sums[0]);
    m.attitude_rmse = rms(sums[1]);
    m.position_rmse = rms(sums[2]);
    m.omega_rmse = rms(sums[3]);
    m.velocity_rmse = rms(sums[4]);
    m.vertical_rmse_cm = rms(sums[5]) * 100.0;
    let share = |ok: usize, all: usize| if all == 0 { 1.0 } else { ok as f64 / all as f64 };
    m.swing_band = share(swing_ok, swing);
    m.stance_band = share(stance_ok, stance);
    m.detections = detection_events(truth, estimates);
    m.touchdown = LatencySummary::from_events(m.detections.iter().filter(|e| e.touchdown));
    m.liftoff = LatencySummary::from_events(m.detections.iter().filter(|e| !e.touchdown));
    Ok(m)
}

impl Metrics {
    /// `key = value` lines. Deterministic: contains nothing measured from the
    /// wall clock.
    pub fn summary(&self, prefix: &str) -> String {
        let mut s = String::new();
        let mut real = |k: &str, v: f64| {
            let _ = writeln!(s, "{prefix}.{k} = {v:.8e}");
        };
        real("full_rmse", self.full_rmse);
        real("attitude_rmse_rad", self.attitude_rmse);
        real("position_rmse_m", self.position_rmse);
        real("omega_rmse_rad_s", self.omega_rmse);
        real("velocity_rmse_m_s", self.velocity_rmse);
        real("vertical_rmse_cm", self.vertical_rmse_cm);
        real("vertical_max_cm", self.vertical_max_cm);
        real("swing_band", self.swing_band);
        real("stance_band", self.stance_band);
        for (name, l) in [("touchdown", &self.touchdown), ("liftoff", &self.liftoff)] {
            real(&format!("{name}_latency_mean_ticks"), l.mean_ticks);
            real(&format!("{name}_latency_median_ticks"), l.median_ticks);
            real(&format!("{name}_latency_mean_ms"), l.mean_ticks * self.ts * 1e3);
            real(&format!("{name}_latency_max_ms"), l.max_ticks as f64 * self.ts * 1e3);
            real(&format!("{name}_within_4_ticks"), l.within_4);
        }
        let mut int = |k: &str, v: usize| {
            let _ = writeln!(s, "{prefix}.{k} = {v}");
        };
        int("ticks", self.ticks);
        int("touchdown_events", self.touchdown.events);
        int("touchdown_detected", self.touchdown.detected);
        int("touchdown_latency_max_ticks", self.touchdown.max_ticks);
        int("liftoff_events", self.liftoff.events);
        int("liftoff_detected", self.liftoff.detected);
        int("liftoff_latency_max_ticks", self.liftoff.max_ticks);
        s
    }
}

/// Mean, median and maximum of per-tick wall-clock times.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TimingSummary {
    pub ticks: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub max_us: f64,
}

impl TimingSummary {
    pub fn from_seconds(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return TimingSummary::default();
        }
        let mut us: Vec<f64> = samples.iter().map(|s| s * 1e6).collect();
        us.sort_by(f64::total_cmp);
        TimingSummary {
            ticks: us.len(),
            mean_us: us.iter().sum::<f64>() / us.len() as f64,
            median_us: median_sorted(&us),
            max_us: *us.last().expect("non-empty"),
        }
    }

    pub fn summary(&self, prefix: &str) -> String {
        format!(
            "{prefix}.tick_mean_ms = {:.6}\n{prefix}.tick_median_ms = {:.6}\n{prefix}.tick_max_ms = {:.6}\n{prefix}.ticks = {}\n",
            self.mean_us / 1e3,
            self.median_us / 1e3,
            self.max_us / 1e3,
            self.ticks
        )
    }
}

/// Parses `key = value` lines, skipping blanks and `#` comments.
pub fn parse_summary(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", i + 1)))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("line {}: `{}` is not a number", i + 1, v.trim())))?;
        out.push((k.trim().to_string(), v));
    }
    Ok(out)
}

/// Per-key mean, minimum and maximum over several summaries, in first-seen key
/// order.
pub fn aggregate(summaries: &[Vec<(String, f64)>]) -> Vec<(String, usize, f64, f64, f64)> {
    let mut keys: Vec<String> = Vec::new();
    for s in summaries {
        for (k, _) in s {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
    }
    keys.into_iter()
        .map(|k| {
            let vals: Vec<f64> = summaries
                .iter()
                .filter_map(|s| s.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (k, vals.len(), mean, min, max)
        })
        .collect()
}
