//! Failure classification for the exit code contract: configuration
//! problems exit 2, numerical checks that cannot pass exit 1.

use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub enum Failure {
    /// Bad, inconsistent or unusable configuration (including an output
    /// directory that cannot be written).
    Config(String),
    /// The computation ran but a certified check failed or could not be
    /// completed in the configured regime.
    Check(String),
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Check(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration: {m}"),
            Failure::Check(m) => write!(f, "{m}"),
        }
    }
}

impl From<nlwave::Error> for Failure {
    fn from(e: nlwave::Error) -> Self {
        match e {
            nlwave::Error::Config(_) | nlwave::Error::Unsupported(_) => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Check(e.to_string()),
        }
    }
}

/// Wraps an io error with the path it happened on. Filesystem trouble is
/// an environment problem, never a failed numerical check.
pub fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Config(format!("{}: {e}", path.display()))
}
