//! Command-line front end: dataset generation, outlier diagnosis, model
//! fitting and benchmark grids.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;

pub use error::{CliError, CliResult};

/// Run the command line and return the process exit code.
pub fn run(argv: Vec<OsString>) -> i32 {
    let cli = match config::parse(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                clap::error::ErrorKind::Io => 4,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
