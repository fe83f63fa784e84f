use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use splitpde::cli::{run, ExperimentKind, RunOptions};

/// Lie-Trotter splitting experiments for stochastic heat equations.
#[derive(Debug, Parser)]
#[command(name = "splitpde", version)]
struct Args {
    #[arg(value_enum)]
    subcommand: ExperimentKind,

    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Output directory for the CSV table and JSON summary.
    #[arg(long)]
    out: PathBuf,

    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Caps the number of worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,

    /// Exit nonzero when the measured order misses the configured tolerance.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let opts = RunOptions {
        config: args.config,
        out: args.out,
        seed: args.seed,
        workers: args.workers,
        strict: args.strict,
    };
    match run(args.subcommand, &opts) {
        Ok(outcome) => {
            if args.subcommand == ExperimentKind::Beta {
                println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap_or_default());
            } else {
                let s = &outcome.summary;
                println!(
                    "{}: fitted_order={} predicted={} pass={}",
                    args.subcommand.name(),
                    s.get("fitted_order").map_or("-".into(), |v| v.to_string()),
                    s.get("predicted_order").map_or("-".into(), |v| v.to_string()),
                    outcome.pass.map_or("-".into(), |p| p.to_string()),
                );
                if let Some(csv) = &outcome.csv {
                    println!("table:   {}", csv.display());
                }
                println!("summary: {}", outcome.json.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("splitpde: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
