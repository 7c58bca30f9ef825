use std::path::PathBuf;

use thiserror::Error;

use rsqn::driver::Termination;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] rsqn::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0} acceptance criteria failed")]
    SelftestFailed(usize),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_BUDGET: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_INPUT: i32 = 4;
/// Any other failure (selftest failures, I/O while writing results).
pub const EXIT_FAILURE: i32 = 1;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Input(_) | CliError::Core(_) => EXIT_INPUT,
            CliError::Io(_) | CliError::SelftestFailed(_) => EXIT_FAILURE,
        }
    }
}

pub fn termination_exit_code(t: Termination) -> i32 {
    match t {
        Termination::Converged => EXIT_OK,
        Termination::BudgetExhausted => EXIT_BUDGET,
        Termination::Diverged => EXIT_DIVERGED,
    }
}
