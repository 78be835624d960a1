use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use fpp_core::harness::{self, EXIT_PASS, EXIT_VALIDATION};

/// Reproducible experiments on filtered Poisson processes.
///
/// Exit codes: 0 pass, 1 invalid input, 2 numerical failure, 3 failed
/// statistical check. Failures print a JSON error record on stderr.
/// FPP_LAB_THREADS caps the number of replica threads.
#[derive(Parser)]
#[command(name = "fpp-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Replaces the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replaces the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a JSON config without running it.
    Validate { config: PathBuf },
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit(EXIT_PASS),
                // clap's own code 2 would read as a numerical failure
                _ => exit(EXIT_VALIDATION),
            };
        }
    };
    let result = match &cli.command {
        Command::Run { config, seed, out } => harness::run_file(config, *seed, out.as_deref()).map(|outcome| {
            println!("{}", outcome.summary_line());
            outcome.exit_code()
        }),
        Command::Validate { config } => harness::validate_file(config).map(|_| {
            println!("VALID {}", config.display());
            EXIT_PASS
        }),
    };
    match result {
        Ok(code) => exit(code),
        Err(err) => {
            println!("ERROR {err}");
            eprintln!("{}", harness::error_record(&err));
            exit(harness::exit_code_for_error(&err))
        }
    }
}
