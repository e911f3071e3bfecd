//! `ose` binary: parse arguments, dispatch, map errors to exit codes.

use clap::Parser;

use ose_cli::commands::{dispatch, exit_code_for, Cli};

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code_for(&err));
        }
    }
}
