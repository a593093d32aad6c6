//! `prnet` command line: dataset generation, training, evaluation,
//! prediction, sensitivity sweeps, and study grids.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure. Failures also
//! emit one JSON line on stderr.

mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use commands::{Cli, CliError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful terminations.
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            emit_error("usage", &e.to_string());
            return ExitCode::from(1);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            emit_error("usage", &msg);
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            emit_error("runtime", &format!("{e:#}"));
            ExitCode::from(2)
        }
    }
}

fn emit_error(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{line}");
}
