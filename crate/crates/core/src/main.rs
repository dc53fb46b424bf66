use std::process::ExitCode;

use clap::Parser;
use mimo_ee::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(manifest) => {
            eprintln!(
                "{}: wrote {} in {:.2} s",
                manifest.command,
                manifest.outputs.join(", "),
                manifest.elapsed_seconds
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
