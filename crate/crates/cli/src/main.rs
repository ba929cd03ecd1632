use std::process::ExitCode;

use clap::Parser;
use ihn_cli::args::Cli;
use ihn_cli::exit::USAGE;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE as u8 } else { 0 });
        }
    };
    match ihn_cli::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
