//! `sast`: run the scene-adaptive sparse transformer pipeline on event
//! data, sweep its sparsity hyper-parameters, or compare against baselines.

mod artifacts;
mod commands;
mod config;
mod suite;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "sast",
    version,
    about = "Scene-adaptive sparse transformer for event-camera streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptive pipeline; export heatmaps, masks, and stats.csv.
    Run(CommonArgs),
    /// Sweep the (a, b) sparsity grid over a fixed suite into sweep.csv.
    Sweep(SweepArgs),
    /// Compare sast / sast-cb / dense / fixed-ratio into compare.csv.
    Compare(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; defaults apply for every omitted key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed of the synthetic suite.
    #[arg(long)]
    seed: Option<u64>,
    /// Synthetic samples per density level.
    #[arg(long)]
    samples: Option<usize>,
    /// Density levels, e.g. 0.1,0.5,0.9.
    #[arg(long, value_delimiter = ',')]
    density: Option<Vec<f64>>,
    /// Scoring scale a.
    #[arg(long)]
    a: Option<f64>,
    /// Threshold scale b.
    #[arg(long)]
    b: Option<f64>,
    /// Competition norm order p.
    #[arg(long)]
    p: Option<f64>,
    /// Enable or disable context broadcasting.
    #[arg(long)]
    cb: Option<bool>,
    /// Window-pruning ratio of the fixed-ratio baseline.
    #[arg(long)]
    fixed_ratio: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Grid values for a, e.g. 0.0001,0.0002,0.0004.
    #[arg(long, value_delimiter = ',')]
    grid_a: Option<Vec<f64>>,
    /// Grid values for b, e.g. 0.05,0.099,0.2.
    #[arg(long, value_delimiter = ',')]
    grid_b: Option<Vec<f64>>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(samples) = self.samples {
            cfg.samples = samples;
        }
        if let Some(density) = &self.density {
            cfg.densities = density.clone();
        }
        if let Some(a) = self.a {
            cfg.a = a;
        }
        if let Some(b) = self.b {
            cfg.b = b;
        }
        if let Some(p) = self.p {
            cfg.p = p;
        }
        if let Some(cb) = self.cb {
            cfg.cb = cb;
        }
        if let Some(r) = self.fixed_ratio {
            cfg.fixed_ratio = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `SAST_NUMERIC`, when set, must name the compiled scalar type; running a
/// mismatched binary silently would invalidate recorded results.
fn check_numeric_mode() -> Result<()> {
    if let Ok(requested) = std::env::var("SAST_NUMERIC") {
        let compiled = sast_core::numeric_mode();
        if requested != compiled {
            bail!(
                "SAST_NUMERIC={requested} but this binary computes in {compiled}; \
                 rebuild with the matching `f32` feature setting"
            );
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    check_numeric_mode()?;
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            commands::cmd_run(&cfg, &args.out)
        }
        Command::Sweep(args) => {
            let cfg = args.common.resolve()?;
            let grid_a = args.grid_a.clone().unwrap_or_else(|| vec![cfg.a]);
            let grid_b = args.grid_b.clone().unwrap_or_else(|| vec![cfg.b]);
            commands::cmd_sweep(&cfg, &args.common.out, &grid_a, &grid_b)
        }
        Command::Compare(args) => {
            let cfg = args.resolve()?;
            commands::cmd_compare(&cfg, &args.out)
        }
    }
}
