use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mmllab::harness::{self, RunOptions};

/// Runs one config-described experiment and writes its CSV and manifest.
#[derive(Parser, Debug)]
#[command(name = "mmllab", version)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Falls back to `MMLLAB_THREADS`.
    #[arg(long)]
    threads: Option<usize>,
    /// Check the config and print resolved parameters without running.
    #[arg(long)]
    validate: bool,
    /// Fill the `wall_ms` column; outputs are then no longer byte-reproducible.
    #[arg(long)]
    timing: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let outcome = harness::load(&args.config).and_then(|plan| {
        if args.validate {
            print!("{}", harness::describe(&plan)?);
            return Ok(());
        }
        let options = RunOptions {
            seed_override: args.seed,
            out_dir: args.out.clone(),
            threads: args.threads,
            timing: args.timing,
        };
        let done = harness::run(plan, &options)?;
        println!(
            "wrote {} rows to {} (config {})",
            done.rows,
            done.csv_path.display(),
            done.config_hash
        );
        Ok(())
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
