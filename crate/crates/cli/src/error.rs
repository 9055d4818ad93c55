use std::fmt;
use std::process::ExitCode;

/// Failure of a subcommand, mapped to a distinct exit status per class.
#[derive(Debug)]
pub enum CliError {
    Core(vamnar::Error),
    Config(String),
    /// Outputs were written but some R-hat reached the threshold.
    Convergence(String),
}

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_CONVERGENCE: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_NUMERICAL: u8 = 5;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        use vamnar::Error as E;
        let code = match self {
            CliError::Config(_) => EXIT_VALIDATION,
            CliError::Convergence(_) => EXIT_CONVERGENCE,
            CliError::Core(e) => match e {
                E::Io { .. } => EXIT_IO,
                E::Numerical { .. } | E::Invariant(_) | E::Diagnostic(_) => EXIT_NUMERICAL,
                _ => EXIT_VALIDATION,
            },
        };
        ExitCode::from(code)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Convergence(m) => write!(f, "convergence check failed: {m}"),
        }
    }
}

impl From<vamnar::Error> for CliError {
    fn from(e: vamnar::Error) -> Self {
        CliError::Core(e)
    }
}
