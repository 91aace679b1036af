use std::process::ExitCode;

use bapn_cli::{run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json(cli.command.name()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
