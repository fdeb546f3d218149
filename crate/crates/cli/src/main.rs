use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nonlocal_cli::run::{load_config, run, with_overrides, RunError};

/// Nonlocal diffusion toolkit: verification suite, solvers and tables.
///
/// Exit status: 0 ok, 1 i/o error, 2 configuration error, 3 numerical
/// failure, 4 identity-check failure.
#[derive(Parser)]
#[command(name = "nonlocal", version)]
struct Args {
    /// Configuration file (`key = value` lines with `[section]` headers).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Force serial execution (bit-reproducible outputs).
    #[arg(long)]
    serial: bool,
    /// Seed for randomised checks; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match load_config(&args.config) {
        Ok(cfg) => with_overrides(cfg, args.out, args.serial, args.seed),
        Err(e) => {
            let e = RunError::from(e);
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    match run(&cfg) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            println!("wrote {} file(s) to {}", summary.files.len(), cfg.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
