mod args;
mod commands;

use std::panic;
use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::commands::Outcome;

const EXIT_MATCH: u8 = 0;
const EXIT_NEGATIVE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { EXIT_MATCH });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return ExitCode::from(EXIT_INTERNAL);
        }
    }
    let report = cli.command.report_path().map(|p| p.to_path_buf());
    match panic::catch_unwind(|| commands::run(cli.command)) {
        Ok(Ok(Outcome::Success)) => ExitCode::from(EXIT_MATCH),
        Ok(Ok(Outcome::Negative)) => ExitCode::from(EXIT_NEGATIVE),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            commands::write_error_report(report.as_deref(), &e);
            ExitCode::from(EXIT_INPUT)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
