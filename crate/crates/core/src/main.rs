use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use contact_imm::harness::{self, metrics, EstimatorChoice, RunConfig};
use contact_imm::Error;

const EXIT_IO: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_OTHER: u8 = 5;

/// Contact detection and trunk-state estimation for a trotting quadruped.
#[derive(Parser)]
#[command(name = "contact-imm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the sensor, truth and schedule CSVs.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the estimators on a trace directory written by `simulate`.
    Estimate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Directory holding sensors.csv and schedule.csv; estimates are
        /// written next to them.
        #[arg(long)]
        trace: PathBuf,
    },
    /// Simulate, estimate and write metrics.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
        /// Run this many consecutive seeds in parallel, one subdirectory each.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Summarize metrics files across run directories.
    Report {
        /// Run directories (or parents of seed_* directories).
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file; defaults apply when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated duration, s.
    #[arg(long)]
    duration: Option<f64>,
    /// imm, baseline or both.
    #[arg(long)]
    estimators: Option<String>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.scenario {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.sim.seed = s;
        }
        if let Some(d) = self.duration {
            cfg.sim.duration = d;
        }
        if let Some(e) = &self.estimators {
            cfg.estimators = e.parse::<EstimatorChoice>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Config(_) | Error::Parse { .. } | Error::InvalidProbability { .. } => EXIT_CONFIG,
        _ => EXIT_OTHER,
    }
}

fn thread_cap() -> Result<usize, Error> {
    match std::env::var("CONTACT_IMM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("CONTACT_IMM_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn print_metrics(dir: &Path) -> Result<(), Error> {
    let path = dir.join(harness::METRICS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
    for line in text.lines().filter(|l| {
        l.starts_with("ratio.") || l.contains("_rmse") || l.contains("within_4") || l.contains("_band")
    }) {
        println!("{line}");
    }
    Ok(())
}

fn run_dirs(dirs: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for d in dirs {
        if d.join(harness::METRICS_FILE).exists() {
            out.push(d.clone());
        }
        if let Ok(entries) = std::fs::read_dir(d) {
            let mut sub: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join(harness::METRICS_FILE).exists())
                .collect();
            sub.sort();
            out.extend(sub);
        }
    }
    out
}

fn report(dirs: &[PathBuf], out: Option<&Path>) -> Result<(), Error> {
    let found = run_dirs(dirs);
    if found.is_empty() {
        return Err(Error::Config("no metrics files found".into()));
    }
    let mut summaries = Vec::new();
    for d in &found {
        let mut all = Vec::new();
        for file in [harness::METRICS_FILE, harness::DIAGNOSTICS_FILE] {
            let path = d.join(file);
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
            all.extend(metrics::parse_summary(&text)?);
        }
        summaries.push(all);
    }
    let mut table = format!("# {} runs\n{:<44} {:>4} {:>14} {:>14} {:>14}\n", found.len(), "key", "n", "mean", "min", "max");
    for (k, n, mean, min, max) in metrics::aggregate(&summaries) {
        table += &format!("{k:<44} {n:>4} {mean:>14.6e} {min:>14.6e} {max:>14.6e}\n");
    }
    print!("{table}");
    if let Some(p) = out {
        std::fs::write(p, &table).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { scenario, out } => {
            let cfg = scenario.load()?;
            let trace = harness::simulate_to(&cfg, &out)?;
            println!("wrote {} ticks to {}", trace.len(), out.display());
        }
        Command::Estimate { scenario, trace } => {
            let cfg = scenario.load()?;
            harness::estimate_dir(&cfg, &trace)?;
            println!("wrote estimates to {}", trace.display());
        }
        Command::Run { scenario, out, seeds } => {
            let cfg = scenario.load()?;
            match seeds {
                None => {
                    harness::run(&cfg, &out)?;
                    print_metrics(&out)?;
                }
                Some(0) => return Err(Error::Config("--seeds must be at least 1".into())),
                Some(k) => {
                    let pool = rayon::ThreadPoolBuilder::new()
                        .num_threads(thread_cap()?)
                        .build()
                        .map_err(|e| Error::Config(e.to_string()))?;
                    let base = cfg.sim.seed;
                    let results: Vec<Result<(), Error>> = pool.install(|| {
                        (0..k)
                            .into_par_iter()
                            .map(|i| {
                                let mut c = cfg.clone();
                                c.sim.seed = base + i;
                                harness::run(&c, &out.join(format!("seed_{}", base + i))).map(|_| ())
                            })
                            .collect()
                    });
                    results.into_iter().collect::<Result<Vec<_>, _>>()?;
                    report(&[out.clone()], Some(&out.join("report.txt")))?;
                }
            }
        }
        Command::Report { dirs, out } => report(&dirs, out.as_deref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
