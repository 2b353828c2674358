//! `bpslam`: simulate measurements, run the multipath SLAM filter, or
//! evaluate it over Monte Carlo runs.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bpslam_core::harness::{run_experiment, Config, Mode};
use clap::Parser;

#[derive(Debug, Parser)]
#[command(name = "bpslam", version, about = "Belief-propagation multipath SLAM")]
struct Args {
    /// JSON configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// simulate | run | evaluate
    #[arg(long)]
    mode: Option<Mode>,
    /// Number of Monte Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Particles per variable.
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(args: Args) -> Result<ExitCode> {
    let (mut config, base_dir) = match &args.config {
        Some(path) => {
            let cfg = Config::load(path).with_context(|| format!("loading {}", path.display()))?;
            let base = path.parent().map(PathBuf::from).unwrap_or_default();
            (cfg, base)
        }
        None => (Config::default(), PathBuf::from(".")),
    };
    if let Some(m) = args.mode {
        config.experiment.mode = m;
    }
    if let Some(r) = args.runs {
        config.experiment.runs = r;
    }
    if let Some(p) = args.particles {
        config.filter.n_particles = p;
        config.filter.intensity_particles = p;
    }
    if let Some(s) = args.seed {
        config.experiment.seed = s;
    }

    let report = run_experiment(&config, &base_dir, &args.out)?;
    for (run, msg) in &report.failures {
        eprintln!("run {run} failed: {msg}");
    }
    if config.experiment.mode != Mode::Simulate {
        eprintln!("runtime per step: {:.3} ms", report.seconds_per_step * 1e3);
    }
    for (k, v) in &report.summary.entries {
        println!("{k}: {v}");
    }
    for f in &report.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(if report.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
