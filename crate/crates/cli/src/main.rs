use std::process::ExitCode;

use clap::Parser;
use gradnetot_cli::cli::{dispatch, Cli};
use gradnetot_cli::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", CliError::Usage(e.to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(manifest) => {
            if let Some(p) = manifest.output("manifest.json") {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
