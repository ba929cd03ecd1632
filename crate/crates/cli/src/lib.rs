//! Command implementations behind the `ihn` binary.

pub mod args;
pub mod cmd;
pub mod common;
pub mod eval;
pub mod exit;

use args::{Cli, Command};
use exit::CliResult;

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => cmd::synth::run(a),
        Command::Train(a) => cmd::train::run(a),
        Command::Eval(a) => cmd::eval::run(a),
        Command::Iclk(a) => cmd::eval::run_iclk(a),
        Command::BenchTime(a) => cmd::bench_time::run(a),
        Command::Ablate(a) => cmd::ablate::run(a),
    }
}
