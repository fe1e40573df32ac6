//! `reachfunnel`: learn dynamics from sampled measurements, certify a model
//! error envelope, synthesize a shrinking corridor to a goal set, and
//! simulate the closed loop.
//!
//! Commands form a pipeline over a shared output directory: `learn` writes
//! `model.toml`, `calibrate` writes `bound.toml`, `synthesize` writes
//! `funnel.toml`, `simulate` consumes all three. `reproduce` chains the four
//! on the bundled benchmark and compares the produced numbers with published
//! reference values. Exit codes: 0 success, 2 input error, 3 infeasible
//! problem, 4 violated runtime guarantee.

mod artifacts;
mod config;
mod pipeline;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pipeline::{CliError, Ctx};

#[derive(Parser)]
#[command(name = "reachfunnel", version, about = "Data-driven funnel control with certified error envelopes", long_about = None)]
struct Cli {
    /// Suppress progress output (errors still go to stderr).
    #[arg(long, global = true)]
    quiet: bool,

    /// Output directory, overriding the config's `out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect or load a dataset and learn the dynamics model.
    Learn {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Use the configured hyperparameters verbatim, skipping the fit.
        #[arg(long)]
        no_fit: bool,
    },
    /// Calibrate the model error envelope by the configured method.
    Calibrate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Monte-Carlo trial count override.
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Construct the shrinking corridor between the start and goal boxes.
    Synthesize {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
    },
    /// Integrate the closed loop and render figures.
    Simulate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Replace `sim.x0` with a K x K grid of starts over the start box.
        #[arg(long, value_name = "K")]
        grid: Option<usize>,
    },
    /// Run the bundled benchmark end to end and compare with published values.
    Reproduce {
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Monte-Carlo trial count override.
        #[arg(long)]
        trials: Option<u64>,
        /// Start-grid resolution (default 4).
        #[arg(long, value_name = "K")]
        grid: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Learn {
            config,
            seed,
            no_fit,
        } => {
            let cfg = config::RunConfig::load(&config)?;
            let ctx = Ctx::new(&cfg, cli.out, cli.quiet, seed)?;
            pipeline::cmd_learn(&ctx, no_fit).map(drop)
        }
        Command::Calibrate {
            config,
            seed,
            trials,
        } => {
            let cfg = config::RunConfig::load(&config)?;
            let ctx = Ctx::new(&cfg, cli.out, cli.quiet, seed)?;
            pipeline::cmd_calibrate(&ctx, trials).map(drop)
        }
        Command::Synthesize { config } => {
            let cfg = config::RunConfig::load(&config)?;
            let ctx = Ctx::new(&cfg, cli.out, cli.quiet, None)?;
            pipeline::cmd_synthesize(&ctx).map(drop)
        }
        Command::Simulate { config, grid } => {
            let cfg = config::RunConfig::load(&config)?;
            let ctx = Ctx::new(&cfg, cli.out, cli.quiet, None)?;
            pipeline::cmd_simulate(&ctx, grid).map(drop)
        }
        Command::Reproduce { seed, trials, grid } => {
            pipeline::cmd_reproduce(cli.out, cli.quiet, seed, trials, grid)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
