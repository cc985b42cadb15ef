//! Command-line front end: argument parsing, output files and run metadata.

// `!(x >= 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod chart;
pub mod commands;
pub mod error;
pub mod metadata;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult, EXIT_INPUT, EXIT_OK};

/// Run one parsed command.
pub fn run(cli: &Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Compare(a) => commands::compare(a),
        Command::Significance(a) => commands::significance(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::VerifyBounds(a) => commands::verify_bounds(a),
        Command::Chart(a) => commands::chart(a),
    })
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
