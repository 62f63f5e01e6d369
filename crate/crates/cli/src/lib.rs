//! Command-line entry points for every pipeline stage.

pub mod args;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command};
pub use error::CliError;

/// Parses `args` (program name first), merges the config file and runs the command.
pub fn run_args(args: Vec<OsString>) -> Result<(), CliError> {
    let args = config::merge(args, &args::COMMANDS)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            let msg = e.render().to_string();
            let msg = msg
                .trim_end()
                .strip_prefix("error: ")
                .unwrap_or(msg.trim_end());
            return Err(CliError::Validation(msg.to_string()));
        }
    };
    match cli.command {
        Command::Stimgen(a) => commands::stimgen(a),
        Command::Synth(a) => commands::synth(a),
        Command::Analyze(a) => commands::analyze_cmd(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Ablate(a) => commands::ablate_cmd(a),
        Command::Serve(a) => commands::serve_cmd(a),
        Command::Export(a) => commands::export_cmd(a),
    }
}

/// Runs and returns the process exit code.
pub fn run(args: Vec<OsString>) -> i32 {
    match run_args(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
