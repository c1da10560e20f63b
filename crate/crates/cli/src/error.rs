use std::fmt;

use turbrestore_core::Error;

/// Failure classes with fixed exit codes: 2 bad arguments, 3 malformed
/// input, 4 solver abort.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Solver(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "invalid arguments: {m}"),
            CliError::Input(m) => write!(f, "bad input: {m}"),
            CliError::Solver(m) => write!(f, "solver aborted: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        // Diagnostics are single-line by contract.
        let msg = e.to_string().replace('\n', " ");
        match e {
            Error::InvalidParameter(_) => CliError::Usage(msg),
            Error::NonFinite { .. } => CliError::Solver(msg),
            _ => CliError::Input(msg),
        }
    }
}
