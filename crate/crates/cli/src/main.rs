use std::panic;
use std::process::ExitCode;

use clap::Parser;
use pairnet::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => {
            eprintln!("pairnet: error: {failure}");
            ExitCode::from(failure.exit_code())
        }
        Err(_) => {
            eprintln!("pairnet: internal error");
            ExitCode::from(1)
        }
    }
}
