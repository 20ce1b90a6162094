//! Tick-indexed gait schedules with early-touchdown events.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::LegIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GaitKind {
    Stand,
    #[default]
    Trot,
    Walk,
}

impl FromStr for GaitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stand" => Ok(GaitKind::Stand),
            "trot" => Ok(GaitKind::Trot),
            "walk" => Ok(GaitKind::Walk),
            other => Err(Error::config(format!("unknown gait `{other}`"))),
        }
    }
}

impl GaitKind {
    /// Phase offsets per leg (FL, FR, RL, RR) as fractions of the period.
    fn offsets(self) -> [f64; 4] {
        match self {
            GaitKind::Stand => [0.0; 4],
            GaitKind::Trot => [0.0, 0.5, 0.5, 0.0],
            // lateral sequence: RL, FL, RR, FR
            GaitKind::Walk => [0.75, 0.25, 0.0, 0.5],
        }
    }

    pub fn default_duty(self) -> f64 {
        match self {
            GaitKind::Stand => 1.0,
            GaitKind::Trot => 0.5,
            GaitKind::Walk => 0.75,
        }
    }
}

/// A foot touching down `advance` ticks before its scheduled touchdown. The
/// affected touchdown is the first one at or after `tick`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EarlyContact {
    pub leg: LegIndex,
    pub tick: i64,
    pub advance: i64,
}

/// One contiguous stance or swing phase, `[start, end)` in ticks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Phase {
    pub stance: bool,
    pub start: i64,
    pub end: i64,
    /// Nominal stance interval this phase belongs to (stance) or leads into
    /// (swing); identifies the foothold.
    pub stance_index: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaitSchedule {
    kind: GaitKind,
    period: i64,
    stance_ticks: i64,
    offsets: [i64; 4],
    early: Vec<(LegIndex, i64, i64)>,
}

impl GaitSchedule {
    /// `period` and `duty` are rounded to whole ticks of length `ts`.
    pub fn new(kind: GaitKind, period: f64, duty: f64, ts: f64) -> Result<Self> {
        if !(duty > 0.0 && duty <= 1.0) {
            return Err(Error::config(format!("duty factor must be in (0, 1], got {duty}")));
        }
        let period_ticks = (period / ts).round() as i64;
        if kind != GaitKind::Stand && period_ticks < 4 {
            return Err(Error::config(format!("gait period {period} s is shorter than 4 ticks")));
        }
        let period_ticks = period_ticks.max(1);
        let stance_ticks = if kind == GaitKind::Stand {
            period_ticks
        } else {
            ((duty * period_ticks as f64).round() as i64).clamp(1, period_ticks)
        };
        let offsets = kind.offsets().map(|o| (o * period_ticks as f64).round() as i64);
        Ok(GaitSchedule {
            kind,
            period: period_ticks,
            stance_ticks,
            offsets,
            early: Vec::new(),
        })
    }

    pub fn kind(&self) -> GaitKind {
        self.kind
    }

    pub fn period_ticks(&self) -> i64 {
        self.period
    }

    pub fn stance_ticks(&self) -> i64 {
        self.stance_ticks
    }

    pub fn swing_ticks(&self) -> i64 {
        self.period - self.stance_ticks
    }

    pub fn is_continuous_stance(&self) -> bool {
        self.stance_ticks == self.period
    }

    /// Registers an early touchdown; returns the tick of the affected nominal
    /// touchdown.
    pub fn add_early_contact(&mut self, event: EarlyContact) -> Result<i64> {
        if self.is_continuous_stance() {
            return Err(Error::config("early contact needs a gait with swing phases"));
        }
        if event.advance < 1 || event.advance >= self.swing_ticks() {
            return Err(Error::config(format!(
                "early contact advance of {} ticks must be in [1, {})",
                event.advance,
                self.swing_ticks()
            )));
        }
        let touchdown = self.next_touchdown(event.leg, event.tick);
        if self.early.iter().any(|&(l, td, _)| l == event.leg && td == touchdown) {
            return Err(Error::config("two early-contact events on the same touchdown"));
        }
        self.early.push((event.leg, touchdown, event.advance));
        Ok(touchdown)
    }

    fn phase_of(&self, leg: LegIndex, n: i64) -> i64 {
        (n + self.offsets[leg.index()]).rem_euclid(self.period)
    }

    /// First nominal touchdown tick at or after `n`.
    pub fn next_touchdown(&self, leg: LegIndex, n: i64) -> i64 {
        let phi = self.phase_of(leg, n);
        if phi == 0 {
            n
        } else {
            n + self.period - phi
        }
    }

    pub fn nominal_contact(&self, leg: LegIndex, n: i64) -> bool {
        self.phase_of(leg, n) < self.stance_ticks
    }

    fn advance_for(&self, leg: LegIndex, touchdown: i64) -> i64 {
        self.early
            .iter()
            .find(|&&(l, td, _)| l == leg && td == touchdown)
            .map_or(0, |&(_, _, a)| a)
    }

    /// True contact flag of `leg` at tick `n`, including early touchdowns.
    pub fn contact(&self, leg: LegIndex, n: i64) -> bool {
        self.phase(leg, n).stance
    }

    pub fn contacts(&self, n: i64) -> [bool; 4] {
        LegIndex::ALL.map(|leg| self.contact(leg, n))
    }

    /// Contact flags of a schedule that leads the nominal gait by `lead` ticks
    /// and knows nothing of early touchdowns.
    pub fn commanded(&self, n: i64, lead: i64) -> [bool; 4] {
        LegIndex::ALL.map(|leg| self.nominal_contact(leg, n + lead))
    }

    /// The stance or swing phase containing tick `n`.
    pub fn phase(&self, leg: LegIndex, n: i64) -> Phase {
        if self.is_continuous_stance() {
            return Phase {
                stance: true,
                start: i64::MIN / 4,
                end: i64::MAX / 4,
                stance_index: 0,
            };
        }
        let phi = self.phase_of(leg, n);
        let cycle_start = n - phi;
        let stance_index = (cycle_start + self.offsets[leg.index()]).div_euclid(self.period);
        if phi < self.stance_ticks {
            let start = cycle_start - self.advance_for(leg, cycle_start);
            return Phase {
                stance: true,
                start,
                end: cycle_start + self.stance_ticks,
                stance_index,
            };
        }
        let next = cycle_start + self.period;
        let early_start = next - self.advance_for(leg, next);
        if n >= early_start {
            return Phase {
                stance: true,
                start: early_start,
                end: next + self.stance_ticks,
                stance_index: stance_index + 1,
            };
        }
        Phase {
            stance: false,
            start: cycle_start + self.stance_ticks,
            end: early_start,
            stance_index: stance_index + 1,
        }
    }

    /// Tick at the middle of nominal stance `index` of `leg`, as a fractional
    /// tick.
    pub fn stance_midpoint(&self, leg: LegIndex, index: i64) -> f64 {
        if self.is_continuous_stance() {
            return 0.0;
        }
        let start = index * self.period - self.offsets[leg.index()];
        start as f64 + 0.5 * (self.stance_ticks - 1) as f64
    }
}
