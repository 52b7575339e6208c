use thiserror::Error;

/// Coarse error classes, used by the command line driver to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerics,
    InvariantFatal,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{function} evaluated outside its domain: {detail}")]
    Domain {
        function: &'static str,
        detail: String,
    },

    #[error("CFL violated in {kernel}: dt = {dt:e} exceeds limit {limit:e}")]
    Cfl {
        kernel: &'static str,
        dt: f64,
        limit: f64,
    },

    #[error("positivity precondition violated in {kernel}: {detail}")]
    Positivity {
        kernel: &'static str,
        detail: String,
    },

    #[error("degenerate step budget: dt = {0:e}")]
    DegenerateStep(f64),

    #[error("age support reached the top of the age grid: n = {value:e} in the last age cell")]
    AgeSupport { value: f64 },

    #[error("precondition `{name}` violated: {detail}")]
    Precondition { name: &'static str, detail: String },

    #[error("fatal invariant breach `{kind}` at step {step} (t = {t}): {detail}")]
    InvariantFatal {
        kind: &'static str,
        step: u64,
        t: f64,
        detail: String,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("snapshot format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Precondition { .. } => ErrorClass::Config,
            Error::Domain { .. }
            | Error::Cfl { .. }
            | Error::Positivity { .. }
            | Error::DegenerateStep(_)
            | Error::GridMismatch(_) => ErrorClass::Numerics,
            Error::AgeSupport { .. } | Error::InvariantFatal { .. } => ErrorClass::InvariantFatal,
            Error::Format(_) | Error::Io(_) => ErrorClass::Io,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
