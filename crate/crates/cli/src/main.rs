use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use angleshrink_cli::commands::{cmd_bench, cmd_evaluate, cmd_report, cmd_shrink};
use angleshrink_cli::config::{ExperimentConfig, ExperimentKind, Overrides};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "angleshrink", version, about = "Angle-based search-space shrinking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every child standalone and write the ground-truth table
    Bench(Args),
    /// Shrink the space once per seed
    Shrink(Args),
    /// Run the selected experiments against the ground-truth table
    Evaluate(Args),
    /// Print the collected text reports
    Report(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Replaces the config's seed list; repeat for several seeds
    #[arg(long = "seed", value_name = "N")]
    seeds: Vec<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Comma-separated experiment names, e.g. ranking,timing
    #[arg(long, value_name = "LIST")]
    experiments: Option<String>,
}

fn load(args: &Args) -> Result<ExperimentConfig> {
    let experiments = match &args.experiments {
        Some(list) => Some(
            list.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(ExperimentKind::parse)
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let overrides = Overrides {
        seeds: args.seeds.clone(),
        out: args.out.clone(),
        workers: args.workers,
        experiments,
    };
    let cfg = ExperimentConfig::load(&args.config, &overrides)?;
    if cfg.file.workers > 0 {
        // ignore the error if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.file.workers)
            .build_global();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench(a) => {
            for p in cmd_bench(&load(&a)?)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Shrink(a) => {
            for p in cmd_shrink(&load(&a)?)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Evaluate(a) => {
            for p in cmd_evaluate(&load(&a)?)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Report(a) => print!("{}", cmd_report(&load(&a)?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
