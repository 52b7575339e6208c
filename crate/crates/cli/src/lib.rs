//! Library side of the `agetumor` command: configuration, subcommands and
//! exit-code mapping. The binary is a thin clap wrapper around this.

pub mod commands;
pub mod config;

use agetumor::ErrorClass;

pub use commands::{cmd_diagnose, cmd_diff, cmd_run, cmd_sweep, DiffRow, RunOutcome, SweepOutcome};
pub use config::{RunSpec, Setup};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] agetumor::Error),
    /// The run finished but breached a checked invariant.
    #[error("run finished with {count} invariant violation(s); first: {first}")]
    Invalid { count: usize, first: String },
}

impl CliError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CliError::Config(_) => ErrorClass::Config,
            CliError::Io(_) => ErrorClass::Io,
            CliError::Core(e) => e.class(),
            CliError::Invalid { .. } => ErrorClass::InvariantFatal,
        }
    }

    pub fn exit_code(&self) -> i32 {
        exit_code(self.class())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Numerics => 3,
        ErrorClass::InvariantFatal => 4,
        ErrorClass::Io => 5,
    }
}
