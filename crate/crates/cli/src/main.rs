use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(byzgather::cli::main(byzgather::cli::Cli::parse()))
}
