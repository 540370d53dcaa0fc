use std::fmt;

use tagm::TagmError;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Fit(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Fit(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Fit(m) => write!(f, "fit error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<TagmError> for CliError {
    fn from(e: TagmError) -> Self {
        let msg = e.to_string();
        match e {
            TagmError::Config(_) => CliError::Usage(msg),
            TagmError::InvalidInput(_)
            | TagmError::NotPositiveDefinite(_)
            | TagmError::Parse { .. }
            | TagmError::Json(_) => CliError::Data(msg),
            TagmError::Io(_) => CliError::Io(msg),
            TagmError::GlassoNotConverged { .. }
            | TagmError::DegenerateEmission { .. }
            | TagmError::EmptyState { .. }
            | TagmError::FitFailed { .. }
            | TagmError::NonMonotone { .. }
            | TagmError::Stability(_) => CliError::Fit(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
