//! The `fss` command line.

pub mod commands;
pub mod config;
pub mod error;
pub mod inputs;
pub mod output;

use std::ffi::OsString;

use clap::Parser;

pub use commands::{Cli, Command};
pub use config::RunConfig;
pub use error::{CliError, EXIT_OK, EXIT_PIPELINE, EXIT_VALIDATION};

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
