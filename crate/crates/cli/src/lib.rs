//! Experiment orchestration for moderation audits: run configs, run
//! directories, the session harness and the named recipes.

pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod recipes;
pub mod rundir;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use commands::Cli;
pub use error::CliError;

/// Parse `args`, run the command and return the process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match commands::dispatch(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("modaudit: {e}");
            e.exit_code()
        }
    }
}
