use std::fmt;
use std::path::Path;

/// Exit codes: 0 success, 1 unexpected failure, 2 invalid input or
/// configuration, 3 diagnostic failure.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Diagnostic(String),
    Core(eqps::Error),
    Io(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Diagnostic(_) => 3,
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Core(eqps::Error::Convergence(_)) => 3,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::Diagnostic(m) => write!(f, "diagnostic failure: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<eqps::Error> for CliError {
    fn from(e: eqps::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
