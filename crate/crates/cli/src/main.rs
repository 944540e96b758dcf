use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use insdepth_cli::{dispatch, load_config, summary, Command, Invocation};
use insdepth_core::convnet::Variant;

/// INS simulation, MEMS error injection and ConvNet position correction.
#[derive(Debug, Parser)]
#[command(name = "insdepth", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Scenario file, or `default` for the built-in scenario.
    #[arg(long, default_value = "default")]
    config: PathBuf,
    /// Master seed; overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict train/evaluate/run-all to one variant.
    #[arg(long)]
    variant: Option<Variant>,
    /// Output directory (default: scenario, then $INSDEPTH_OUT, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let scenario = match load_config(&args.config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: config {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let inv = Invocation::new(scenario, args.seed, args.variant, args.out);
    match dispatch(args.command, &inv) {
        Ok(report) => {
            if let Some(r) = report {
                print!("{}", summary(&r));
            }
            eprintln!("{}: wrote {}", args.command.name(), inv.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
