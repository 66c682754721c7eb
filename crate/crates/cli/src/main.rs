//! `aps`: batch entry point for simulations, survey analysis, one-shot
//! batch planning, and the planning service.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "aps", version, about = "Adaptive sampling for estimating many distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo comparison of sampling strategies and write
    /// report.json and report.csv.
    Simulate {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of replications in the config.
        #[arg(long)]
        replications: Option<usize>,
        /// Worker threads; all available cores when absent.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Compare actual, known-variance, constrained, and adaptive
    /// allocations for a survey CSV; writes comparison.csv and
    /// comparison.json.
    AnalyzeSurvey {
        /// Survey CSV with columns category,weight,samples,positives[,theta].
        input: PathBuf,
        /// Optional analysis options (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Seed of the adaptive replay.
        #[arg(long)]
        seed: Option<u64>,
        /// Batch size of the adaptive replay [default: 100].
        #[arg(long)]
        batch_size: Option<u64>,
        /// Number of adaptive replays [default: 200].
        #[arg(long)]
        replications: Option<usize>,
        /// Per-category MSE target, as NAME=VALUE; repeatable.
        #[arg(long = "theta", value_name = "NAME=VALUE")]
        thetas: Vec<String>,
        /// MSE target of the overall estimate.
        #[arg(long)]
        overall_target: Option<f64>,
    },
    /// Recommend the next batch for a session snapshot (the JSON returned
    /// by `GET /sessions/{id}`).
    PlanBatch {
        /// Session snapshot (JSON).
        snapshot: PathBuf,
        /// Number of samples in the next batch.
        #[arg(long)]
        batch_size: u64,
        /// Per-category MSE target override, as NAME=VALUE; repeatable.
        #[arg(long = "theta", value_name = "NAME=VALUE")]
        thetas: Vec<String>,
        /// Overall MSE target override.
        #[arg(long)]
        overall_target: Option<f64>,
        /// Write the recommendation here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the HTTP planning service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Append-only session journal; replayed at startup.
        #[arg(long)]
        journal: Option<PathBuf>,
        /// Bearer token required on every route except /healthz.
        #[arg(long, env = "APS_TOKEN", hide_env_values = true)]
        token: Option<String>,
    },
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("APS_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            replications,
            workers,
        } => commands::simulate(&config, &out, seed, replications, workers),
        Command::AnalyzeSurvey {
            input,
            config,
            out,
            seed,
            batch_size,
            replications,
            thetas,
            overall_target,
        } => commands::analyze_survey(
            &input,
            config.as_deref(),
            &out,
            commands::SurveyFlags {
                seed,
                batch_size,
                replications,
                thetas,
                overall_target,
            },
        ),
        Command::PlanBatch {
            snapshot,
            batch_size,
            thetas,
            overall_target,
            out,
        } => commands::plan_batch(&snapshot, batch_size, &thetas, overall_target, out.as_deref()),
        Command::Serve { addr, journal, token } => commands::serve(addr, journal, token),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
