use anyhow::Context;
use bsde_cli::{apply_overrides, load_config, Overrides};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Numerical laboratory for BSDEs with weakly monotone generators.
#[derive(Parser)]
#[command(name = "bsde", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Path to the TOML config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output root directory.
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,

    /// Cap the rayon worker count (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Label for the run directory (defaults to a timestamp).
    #[arg(long, global = true)]
    label: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write the solution table plus summary.
    Solve,
    /// Run the configured condition samplers.
    Check,
    /// Run an experiment manifest with its gates.
    Experiment,
    /// Evaluate modulus transformations, classifications and bounds.
    Modulus,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("rayon pool")?;
    }
    let config_path = cli
        .config
        .as_deref()
        .context("--config PATH is required")?;
    let cfg = load_config(config_path)?;
    let cfg = apply_overrides(
        cfg,
        &Overrides { seed: cli.seed, outdir: cli.outdir, label: cli.label },
    );
    let passed = match cli.command {
        Command::Solve => bsde_cli::run_solve(&cfg)?,
        Command::Check => bsde_cli::run_check(&cfg)?,
        Command::Experiment => bsde_cli::run_experiment_cmd(&cfg)?,
        Command::Modulus => bsde_cli::run_modulus(&cfg)?,
    };
    Ok(passed)
}
