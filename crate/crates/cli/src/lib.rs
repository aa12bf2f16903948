//! Command-line front end for training, evaluating and probing capacity-
//! targeted text VAEs.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;
use thiserror::Error;

pub use commands::Cli;

/// Missing or contradictory arguments; reported with exit code 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Runs the tool and returns the process exit code. Failures end with a
/// single `error: kind=<kind> msg=<message>` line on stderr.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let rendered = e.render().to_string();
            let _ = write!(stderr, "{rendered}");
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let msg = first.strip_prefix("error: ").unwrap_or(first);
            let _ = writeln!(stderr, "error: kind=usage msg={}", one_line(msg));
            return EXIT_USAGE;
        }
    };
    match commands::execute(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let usage = e
                .chain()
                .any(|c| c.is::<UsageError>() || c.is::<config::ConfigError>());
            let kind = if usage {
                "usage"
            } else {
                e.chain()
                    .find_map(|c| c.downcast_ref::<capvae::Error>())
                    .map(|c| c.kind())
                    .unwrap_or("runtime")
            };
            if usage {
                let _ = writeln!(stderr, "usage: capvae <COMMAND> [OPTIONS]; see `capvae --help`");
            }
            let _ = writeln!(stderr, "error: kind={kind} msg={}", one_line(&format!("{e:#}")));
            if usage {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
