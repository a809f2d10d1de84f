use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use recovery_cli::config::{validate_config, PolicySelection, RunConfig};
use recovery_cli::runner::{self, RunOptions};
use recovery_core::rng::Stream;

/// Post-earthquake building-portfolio recovery simulator and planner.
#[derive(Parser)]
#[command(name = "recovery-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scenario and write analysis files.
    Run {
        /// Path to the run config (JSON).
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the replication count.
        #[arg(long)]
        replications: Option<u32>,
        /// Which policies to run.
        #[arg(long, value_enum)]
        policy: Option<PolicySelection>,
        /// Worker threads for replications (output bytes do not depend
        /// on this).
        #[arg(long)]
        threads: Option<usize>,
        /// Re-run against a recorded realization.json instead of sampling
        /// a fresh hazard.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Check a config file and report every violation without running.
    Validate {
        config: PathBuf,
    },
    /// Generate (or convert) the configured community and save it.
    GenerateCommunity {
        config: PathBuf,
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
            replications,
            policy,
            threads,
            replay,
        } => {
            let opts = RunOptions {
                seed,
                out_dir,
                replications,
                policy,
                threads,
                replay,
            };
            match runner::run(&config, &opts) {
                Ok(_) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Validate { config } => match validate(&config) {
            Ok(violations) if violations.is_empty() => {
                println!("ok: no violations");
                ExitCode::SUCCESS
            }
            Ok(violations) => {
                println!("{} violation(s):", violations.len());
                for v in &violations {
                    println!("  - {v}");
                }
                ExitCode::from(2)
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
        Command::GenerateCommunity { config, out } => match generate_community(&config, &out) {
            Ok(()) => {
                println!("wrote community to {}", out.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}

fn validate(config_path: &Path) -> Result<Vec<String>> {
    let config = RunConfig::load(config_path)?;
    let dir = config_path.parent().unwrap_or(Path::new("."));
    Ok(validate_config(&config, dir))
}

fn generate_community(config_path: &Path, out: &Path) -> Result<()> {
    let config = RunConfig::load(config_path).context("config stage failed")?;
    let dir = config_path.parent().unwrap_or(Path::new("."));
    let master = Stream::new(config.master_seed);
    let model = runner::load_model(&config, dir, &master).context("community stage failed")?;
    recovery_cli::formats::save_community(&model, out).context("output stage failed")
}
