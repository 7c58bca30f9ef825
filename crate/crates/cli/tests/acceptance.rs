//! All acceptance criteria, one line each. Exits nonzero if any criterion fails.

use std::process::ExitCode;

use rsqn_cli::selftest::{run_selftest, write_reports};

fn main() -> ExitCode {
    let reports = run_selftest(&[]);
    match write_reports(&mut std::io::stdout().lock(), &reports) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
