//! CSV files shared by the simulator, the estimators and the plotting scripts.
//!
//! Every file has a header row. Reals are written with nine significant
//! digits, contact flags as `0`/`1`. Readers check the header exactly, so a
//! file written by one version cannot be silently misread by another.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::dynamics::{StateVector, TrunkState, STATE_DIM};
use crate::error::{Error, Result};
use crate::estimator::Estimate;
use crate::measurements::SensorFrame;
use crate::model::{LegIndex, LegState};
use crate::sim::TruthSample;

pub const STATE_COLUMNS: [&str; STATE_DIM] = [
    "roll", "pitch", "yaw", "px", "py", "pz", "wx", "wy", "wz", "vx", "vy", "vz",
];

pub fn fmt_real(v: f64) -> String {
    format!("{v:.8e}")
}

fn xyz(prefix: &str) -> [String; 3] {
    ["x", "y", "z"].map(|a| format!("{prefix}_{a}"))
}

fn per_leg(name: &str) -> Vec<String> {
    LegIndex::ALL
        .iter()
        .flat_map(|leg| (0..3).map(move |j| format!("{}_{name}{j}", leg.name())))
        .collect()
}

pub fn sensor_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(xyz("theta"));
    h.extend(xyz("accel"));
    h.extend(xyz("omega"));
    for leg in LegIndex::ALL {
        for channel in ["q", "qd", "tau"] {
            h.extend((0..3).map(|j| format!("{}_{channel}{j}", leg.name())));
        }
    }
    h
}

pub fn truth_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(STATE_COLUMNS.map(String::from));
    h.extend(LegIndex::ALL.map(|l| format!("contact_{}", l.name())));
    h.extend(per_leg("f"));
    h.extend(xyz("origin"));
    h
}

pub fn schedule_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(LegIndex::ALL.map(|l| format!("cmd_{}", l.name())));
    h
}

pub fn estimate_header(modes: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(STATE_COLUMNS.map(String::from));
    h.extend(LegIndex::ALL.map(|l| format!("p_{}", l.name())));
    h.extend((1..=modes).map(|k| format!("mu_{k}")));
    h
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let io = |e| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in rows {
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Header and numeric rows of a CSV file.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let row = record
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("`{s}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn expect_header(path: &Path, found: &[String], expected: &[String]) -> Result<()> {
    if found != expected {
        let detail = found
            .iter()
            .zip(expected)
            .position(|(a, b)| a != b)
            .map(|i| format!("column {} is `{}`, expected `{}`", i + 1, found[i], expected[i]))
            .unwrap_or_else(|| format!("{} columns, expected {}", found.len(), expected.len()));
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header: {detail}"),
        });
    }
    Ok(())
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn read_flag(path: &Path, line: usize, v: f64) -> Result<bool> {
    match v {
        0.0 => Ok(false),
        1.0 => Ok(true),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("contact flag must be 0 or 1, found {v}"),
        }),
    }
}

fn v3(row: &[f64], at: usize) -> Vector3<f64> {
    Vector3::new(row[at], row[at + 1], row[at + 2])
}

fn push3(out: &mut Vec<String>, v: &Vector3<f64>) {
    out.extend(v.iter().map(|x| fmt_real(*x)));
}

pub fn write_sensors(path: &Path, frames: &[SensorFrame]) -> Result<()> {
    let rows = frames.iter().map(|f| {
        let mut r = vec![fmt_real(f.t)];
        push3(&mut r, &f.theta_bar);
        push3(&mut r, &f.accel_bar);
        push3(&mut r, &f.omega_bar);
        for l in &f.legs {
            push3(&mut r, &l.q);
            push3(&mut r, &l.q_dot);
            push3(&mut r, &l.tau);
        }
        r
    });
    write_table(path, &sensor_header(), rows)
}

pub fn read_sensors(path: &Path) -> Result<Vec<SensorFrame>> {
    let table = read_table(path)?;
    expect_header(path, &table.header, &sensor_header())?;
    Ok(table
        .rows
        .iter()
        .map(|r| SensorFrame {
            t: r[0],
            theta_bar: v3(r, 1),
            accel_bar: v3(r, 4),
            omega_bar: v3(r, 7),
            legs: [0, 1, 2, 3].map(|i| {
                let base = 10 + 9 * i;
                LegState {
                    q: v3(r, base),
                    q_dot: v3(r, base + 3),
                    tau: v3(r, base + 6),
                }
            }),
        })
        .collect())
}

pub fn write_truth(path: &Path, samples: &[TruthSample]) -> Result<()> {
    let rows = samples.iter().map(|s| {
        let mut r = vec![fmt_real(s.t)];
        r.extend(s.state.to_vector().iter().map(|v| fmt_real(*v)));
        r.extend(s.contacts.map(flag));
        for f in &s.forces {
            push3(&mut r, f);
        }
        push3(&mut r, &s.origin);
        r
    });
    write_table(path, &truth_header(), rows)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthSample>> {
    let table = read_table(path)?;
    expect_header(path, &table.header, &truth_header())?;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut contacts = [false; 4];
            for (leg, c) in contacts.iter_mut().enumerate() {
                *c = read_flag(path, i + 2, r[13 + leg])?;
            }
            Ok(TruthSample {
                t: r[0],
                state: TrunkState::from_vector(&StateVector::from_column_slice(&r[1..13])),
                contacts,
                forces: [0, 1, 2, 3].map(|leg| v3(r, 17 + 3 * leg)),
                origin: v3(r, 29),
            })
        })
        .collect()
}

pub fn write_schedule(path: &Path, t: &[f64], commanded: &[[bool; 4]]) -> Result<()> {
    if t.len() != commanded.len() {
        return Err(Error::LengthMismatch {
            what: "schedule times vs flags",
            left: t.len(),
            right: commanded.len(),
        });
    }
    let rows = t.iter().zip(commanded).map(|(t, c)| {
        let mut r = vec![fmt_real(*t)];
        r.extend(c.map(flag));
        r
    });
    write_table(path, &schedule_header(), rows)
}

/// Times and commanded contact flags.
pub fn read_schedule(path: &Path) -> Result<(Vec<f64>, Vec<[bool; 4]>)> {
    let table = read_table(path)?;
    expect_header(path, &table.header, &schedule_header())?;
    let mut times = Vec::with_capacity(table.rows.len());
    let mut flags = Vec::with_capacity(table.rows.len());
    for (i, r) in table.rows.iter().enumerate() {
        times.push(r[0]);
        let mut c = [false; 4];
        for (leg, v) in c.iter_mut().enumerate() {
            *v = read_flag(path, i + 2, r[1 + leg])?;
        }
        flags.push(c);
    }
    Ok((times, flags))
}

pub fn write_estimates(path: &Path, estimates: &[Estimate], modes: usize) -> Result<()> {
    if let Some(bad) = estimates.iter().find(|e| e.mode_probabilities.len() != modes) {
        return Err(Error::LengthMismatch {
            what: "mode probabilities",
            left: bad.mode_probabilities.len(),
            right: modes,
        });
    }
    let rows = estimates.iter().map(|e| {
        let mut r = vec![fmt_real(e.t)];
        r.extend(e.state.iter().map(|v| fmt_real(*v)));
        r.extend(e.contact.iter().map(|v| fmt_real(*v)));
        r.extend(e.mode_probabilities.iter().map(|v| fmt_real(*v)));
        r
    });
    write_table(path, &estimate_header(modes), rows)
}

/// Reads an estimate file; the mode count comes from the header.
pub fn read_estimates(path: &Path) -> Result<Vec<Estimate>> {
    let table = read_table(path)?;
    let fixed = 1 + STATE_DIM + 4;
    let modes = table.header.len().saturating_sub(fixed);
    expect_header(path, &table.header, &estimate_header(modes))?;
    Ok(table
        .rows
        .iter()
        .map(|r| Estimate {
            t: r[0],
            state: StateVector::from_column_slice(&r[1..1 + STATE_DIM]),
            contact: [0, 1, 2, 3].map(|i| r[1 + STATE_DIM + i]),
            mode_probabilities: r[fixed..].to_vec(),
        })
        .collect())
}
