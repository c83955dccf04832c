use std::path::PathBuf;
use std::process::exit;

use clap::{Parser, Subcommand};

use treeorder::cli::{self, CliError, SimulateOpts};

/// Constrained MLE under a tree order restriction and its Monte Carlo
/// study tool.
#[derive(Parser)]
#[command(name = "treeorder", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a dataset (CSV with columns population_id,value; id 0 = control).
    Fit {
        /// Input CSV path.
        input: PathBuf,
    },
    /// Run a Monte Carlo experiment from a JSON config.
    Simulate {
        /// Experiment config (JSON, strict schema).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for records, summaries and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker count (fallback: TREEORDER_WORKERS, then all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Histogram bin count.
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
    /// Randomized self-check of the estimator against its oracles.
    OracleCheck {
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long = "max-s", default_value_t = 12)]
        max_s: usize,
        #[arg(long, default_value_t = 20260823)]
        seed: u64,
    },
    /// Re-aggregate stored records into summary files.
    Report {
        /// records.csv produced by `simulate`.
        records: PathBuf,
        /// Manifest path (default: manifest.json beside the records).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Histogram bin count (default: value recorded in the manifest).
        #[arg(long)]
        bins: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { input } => {
            print!("{}", cli::cmd_fit(&input)?);
            Ok(())
        }
        Command::Simulate { config, out, seed, workers, bins } => {
            let manifest = cli::cmd_simulate(&SimulateOpts { config, out, seed, workers, bins })?;
            println!(
                "wrote {} file(s), seed {}",
                manifest.outputs.len() + 1,
                manifest.seed
            );
            Ok(())
        }
        Command::OracleCheck { trials, max_s, seed } => {
            let outcome = cli::oracle_scan(trials, max_s, seed)?;
            print!("{}", cli::render_oracle_report(&outcome));
            if outcome.passed() {
                Ok(())
            } else {
                Err(CliError::Validation(format!(
                    "{} of {} oracle trials failed",
                    outcome.failures, outcome.trials
                )))
            }
        }
        Command::Report { records, manifest, out, bins } => {
            cli::cmd_report(&records, manifest.as_deref(), &out, bins)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        exit(e.exit_code());
    }
}
