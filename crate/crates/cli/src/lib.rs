//! Command-line front end: argument parsing, configuration precedence and
//! the `refine`, `simulate`, `evaluate` and `reconstruct` subcommands.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

pub use commands::Outcome;
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "emba", version, about = "Event-based mosaicing bundle adjustment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Jointly refine a trajectory and gradient map from events.
    Refine(Flags),
    /// Generate events, ground truth and a perturbed trajectory.
    Simulate(Flags),
    /// Compare a trajectory with a reference; optionally compute PhE.
    Evaluate(Flags),
    /// Integrate a gradient map into an intensity panorama.
    Reconstruct(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Refine(_) => "refine",
            Command::Simulate(_) => "simulate",
            Command::Evaluate(_) => "evaluate",
            Command::Reconstruct(_) => "reconstruct",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::Refine(f) | Command::Simulate(f) | Command::Evaluate(f) | Command::Reconstruct(f) => f,
        }
    }
}

/// Options shared by every subcommand. Each overrides the key of the same
/// name in the `--config` file.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Event file (text `t x y p` or binary).
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Trajectory file (`t qw qx qy qz` per line).
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Reference trajectory for rotation error.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Initial intensity map (PFM log intensity or PGM).
    #[arg(long)]
    pub init_map: Option<PathBuf>,
    /// Gradient map prefix (`<prefix>.gx.pfm`, `<prefix>.gy.pfm`).
    #[arg(long)]
    pub gradient: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key=value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub contrast: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Control-pose rate in Hz.
    #[arg(long)]
    pub pose_rate: Option<f64>,
    #[arg(long)]
    pub map_width: Option<usize>,
    #[arg(long)]
    pub map_height: Option<usize>,
    /// Enable the Huber loss (optionally `--huber=false`).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub huber: Option<bool>,
    #[arg(long)]
    pub huber_delta: Option<f64>,
    /// schur, cg or dense.
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Worker threads; 1 selects the deterministic sequential path.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Flags {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        [
            ("events", path(&self.events)),
            ("trajectory", path(&self.trajectory)),
            ("reference", path(&self.reference)),
            ("init-map", path(&self.init_map)),
            ("gradient", path(&self.gradient)),
            ("out", path(&self.out)),
            ("contrast", self.contrast.map(|v| v.to_string())),
            ("eta", self.eta.map(|v| v.to_string())),
            ("pose-rate", self.pose_rate.map(|v| v.to_string())),
            ("map-width", self.map_width.map(|v| v.to_string())),
            ("map-height", self.map_height.map(|v| v.to_string())),
            ("huber", self.huber.map(|v| v.to_string())),
            ("huber-delta", self.huber_delta.map(|v| v.to_string())),
            ("solver", self.solver.clone()),
            ("max-iters", self.max_iters.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }

    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (key, value) in self.overrides() {
            cfg.set(key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = cli.command.flags().resolve()?;
    if cfg.threads > 1 && !emba::exec::configure_threads(cfg.threads) {
        log::warn!("could not resize the worker pool to {} threads", cfg.threads);
    }
    match &cli.command {
        Command::Refine(_) => commands::refine(&cfg),
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Evaluate(_) => commands::evaluate(&cfg),
        Command::Reconstruct(_) => commands::reconstruct(&cfg),
    }
}

/// Process exit status for a run result: 0 success, 1 error, 2 not converged.
pub fn exit_code(result: &Result<Outcome>) -> ExitCode {
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(_) => ExitCode::from(1),
    }
}
