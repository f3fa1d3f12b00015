//! Command-line interface: `simulate`, `cv`, `fit`, `predict`, `evaluate`.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::geometry::EARTH_RADIUS_KM;
use crate::io::CoordinateMode;

#[derive(Debug, Parser)]
#[command(name = "conjnngp", version, about = "Conjugate latent NNGP models for large spatial data")]
pub struct Cli {
    /// TOML configuration; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (outputs do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More logging on stderr (-v info, -vv debug with CG diagnostics).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Append per-phase wall-clock seconds to this file as `phase,seconds`.
    #[arg(long, global = true)]
    pub timing_out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CoordArgs {
    /// Read `lon,lat` degrees and project them (only `sinusoidal`).
    #[arg(long, value_parser = ["sinusoidal"])]
    pub project: Option<String>,
    /// Earth radius used by the projection, in km.
    #[arg(long, default_value_t = EARTH_RADIUS_KM)]
    pub radius_km: f64,
}

impl CoordArgs {
    pub fn mode(&self) -> CoordinateMode {
        match self.project {
            Some(_) => CoordinateMode::Sinusoidal { radius_km: self.radius_km },
            None => CoordinateMode::Planar,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate `y = β0 + β1 x1 + w + ε` on the unit square.
    Simulate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, allow_hyphen_values = true)]
        beta0: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        beta1: Option<f64>,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long)]
        tau2: Option<f64>,
        #[arg(long)]
        phi: Option<f64>,
        /// Rows flagged as held out (default n/6).
        #[arg(long)]
        holdout: Option<usize>,
        /// `dense` (exact, n ≤ 5000), `nngp`, or `auto`.
        #[arg(long, default_value = "auto", value_parser = ["auto", "dense", "nngp"])]
        simulator: String,
        /// Neighbors of the NNGP simulator.
        #[arg(long, default_value_t = 15)]
        sim_m: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate (φ, δ²) on the training rows.
    Cv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long = "K")]
        k: Option<usize>,
        /// Log-spaced φ ∈ [3, 300]/maxdist and δ² ∈ [0.001, 1000].
        #[arg(long, conflicts_with = "grid_file")]
        grid_default: bool,
        /// TOML file with `[grid]` phi/delta2 = [lo, hi, levels].
        #[arg(long)]
        grid_file: Option<PathBuf>,
        /// Levels per axis of the default grid.
        #[arg(long, default_value_t = 5)]
        grid_levels: usize,
        /// Refinement stages after the first grid.
        #[arg(long)]
        refine: Option<usize>,
        /// Log-width factor of each refinement.
        #[arg(long, default_value_t = 0.5)]
        shrink: f64,
        #[arg(long, value_parser = ["latent", "response"])]
        model: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        a_sigma: Option<f64>,
        #[arg(long)]
        b_sigma: Option<f64>,
        #[arg(long)]
        cg_tol: Option<f64>,
        /// Directory for cached training factors.
        #[arg(long)]
        factor_cache: Option<PathBuf>,
        #[command(flatten)]
        coords: CoordArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the conjugate latent model at fixed (φ, δ²) and draw from the posterior.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        phi: Option<f64>,
        #[arg(long)]
        delta2: Option<f64>,
        #[arg(long)]
        a_sigma: Option<f64>,
        #[arg(long)]
        b_sigma: Option<f64>,
        #[arg(long = "L")]
        draws: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        cg_tol: Option<f64>,
        /// Binary bundle when the name ends in `.bin`, CSV otherwise.
        #[arg(long)]
        draws_out: PathBuf,
        #[arg(long)]
        summary_out: Option<PathBuf>,
        #[arg(long)]
        factor_cache: Option<PathBuf>,
        #[command(flatten)]
        coords: CoordArgs,
    },
    /// Predict at new sites from a posterior bundle.
    Predict {
        #[arg(long)]
        posterior: PathBuf,
        /// Sites CSV; with a `holdout` column only rows flagged 1 are used.
        #[arg(long)]
        sites: PathBuf,
        /// Neighbors per site (default: the fitted m).
        #[arg(long)]
        m: Option<usize>,
        /// Seed of the predictive sampler (default: the fit seed).
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        coords: CoordArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fit against simulated truth.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Timing file written by `--timing-out` during the fit.
        #[arg(long)]
        timing: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Wall-clock per phase, reported on stderr and optionally to a file.
pub(crate) struct Timer {
    phases: Vec<(String, f64)>,
    start: Instant,
}

impl Timer {
    fn new() -> Self {
        Self { phases: Vec::new(), start: Instant::now() }
    }

    pub(crate) fn lap(&mut self, phase: &str) {
        let secs = self.start.elapsed().as_secs_f64();
        eprintln!("[time] {phase}: {secs:.3} s");
        self.phases.push((phase.to_string(), secs));
        self.start = Instant::now();
    }

    fn write(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        for (p, s) in &self.phases {
            writeln!(f, "{p},{s:.3}")?;
        }
        Ok(())
    }
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    let mut timer = Timer::new();
    match commands::dispatch(&cli, &mut timer) {
        Ok(()) => {
            if let Some(path) = &cli.timing_out {
                if let Err(e) = timer.write(path) {
                    eprintln!("error: cannot write timing file {}: {e}", path.display());
                    return 1;
                }
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
