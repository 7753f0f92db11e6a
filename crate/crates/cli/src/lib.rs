//! Command-line front end: JSON configs in, reports and CSV/text/SVG
//! artifacts out.

pub mod commands;
pub mod config;
pub mod provenance;

use std::ffi::OsString;
use std::io::Write;

use clap::error::ErrorKind;
use clap::Parser;

pub use commands::{Cli, CliError, Command, EXIT_CONFIG, EXIT_INDETERMINATE, EXIT_INFEASIBLE, EXIT_IO, EXIT_RUNTIME};
pub use config::{parse_config, parse_str, ConfigError, ParsedConfig, RunConfig};

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                // clap's own code 2 would collide with "indeterminate"
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_CONFIG
                }
            };
        }
    };
    match commands::dispatch(&cli) {
        Ok((code, report)) => {
            let _ = write!(out, "{report}");
            code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
