//! `kes`: kernel ergodic search.
//!
//! Subcommands: `plan` (optimize a coverage trajectory), `tune` (kernel
//! bandwidth grid scan), `fit` (EM-fit an SE(3) mixture from a
//! demonstration log), `metric` (score a trajectory file), and `bench`
//! (the randomized benchmark harness).

mod commands;
mod config;
mod formats;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kes", version, about = "Kernel ergodic search: coverage trajectory optimization in R^n and on SO(3)/SE(3)")]
struct Cli {
    /// Cap the worker thread count (1 = bit-reproducible mode).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Zero wall-clock fields in outputs so runs with equal seeds are
    /// byte-identical.
    #[arg(long, global = true)]
    redact_timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize an ergodic coverage trajectory from a JSON run config.
    Plan {
        /// Run configuration (schema kes/run-config/1).
        #[arg(long)]
        config: String,
    },
    /// Scan kernel bandwidth candidates against target samples.
    Tune {
        /// Target mixture JSON.
        #[arg(long)]
        target: String,
        /// Sample CSV (one point per line); drawn from the target when absent.
        #[arg(long)]
        samples: Option<String>,
        #[arg(long, default_value_t = 200)]
        sample_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        grid_min: f64,
        #[arg(long, default_value_t = 0.1)]
        grid_max: f64,
        #[arg(long, default_value_t = 16)]
        grid_size: usize,
        /// Explicit comma-separated grid (overrides min/max/size).
        #[arg(long)]
        grid: Option<String>,
        /// Optional sweep CSV output (theta, objective).
        #[arg(long)]
        sweep_csv: Option<String>,
    },
    /// Fit an SE(3) Gaussian mixture to a demonstration log with EM.
    Fit {
        /// Demonstration CSV: t,x,y,z,qw,qx,qy,qz at a fixed rate.
        #[arg(long)]
        demo: String,
        #[arg(long, default_value_t = 1)]
        components: usize,
        /// Lower the fitted means along z by this many meters.
        #[arg(long, default_value_t = 0.0)]
        z_offset: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output mixture JSON path.
        #[arg(long)]
        output: String,
    },
    /// Evaluate metrics for a trajectory file against a target mixture.
    Metric {
        #[arg(long)]
        trajectory: String,
        #[arg(long)]
        target: String,
        /// Kernel variance: a number or a JSON array of per-dim variances.
        #[arg(long)]
        theta: String,
        /// Also compute the Fourier metric with this per-dim index count
        /// (dims <= 3 only).
        #[arg(long)]
        fourier: Option<usize>,
    },
    /// Run the randomized benchmark sweep from a JSON config.
    Bench {
        /// Bench configuration (schema kes/bench-config/1).
        #[arg(long)]
        config: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
        {
            eprintln!("error: failed to configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    let result = match &cli.command {
        Command::Plan { config } => commands::cmd_plan(config, cli.redact_timing),
        Command::Tune {
            target,
            samples,
            sample_count,
            seed,
            grid_min,
            grid_max,
            grid_size,
            grid,
            sweep_csv,
        } => commands::cmd_tune(
            target,
            samples.as_deref(),
            *sample_count,
            *seed,
            *grid_min,
            *grid_max,
            *grid_size,
            grid.as_deref(),
            sweep_csv.as_deref(),
        ),
        Command::Fit {
            demo,
            components,
            z_offset,
            seed,
            output,
        } => commands::cmd_fit(demo, *components, *z_offset, *seed, output),
        Command::Metric {
            trajectory,
            target,
            theta,
            fourier,
        } => commands::cmd_metric(trajectory, target, theta, *fourier),
        Command::Bench { config } => commands::cmd_bench(config, cli.redact_timing),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
