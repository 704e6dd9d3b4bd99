use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = cellseg_cli::Cli::parse();
    ExitCode::from(cellseg_cli::run(cli))
}
