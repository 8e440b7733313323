use std::fmt;
use std::path::PathBuf;

/// Bad command line or configuration; exit status 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Context attached to failures reading or writing a data file; exit status 2.
#[derive(Debug)]
pub struct DataError(pub PathBuf);

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "data file {}", self.0.display())
    }
}

/// A verification check that did not pass; exit status 3.
#[derive(Debug)]
pub struct CheckFailed(pub Vec<String>);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "failed checks: {}", self.0.join(", "))
    }
}

impl std::error::Error for CheckFailed {}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Maps an error chain to the process exit status.
pub fn exit_status(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<DataError>().is_some() {
        return EXIT_DATA;
    }
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_USAGE;
        }
        if cause.is::<CheckFailed>() {
            return EXIT_NUMERIC;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
        if let Some(e) = cause.downcast_ref::<sfmu::Error>() {
            use sfmu::Error::*;
            return match e {
                Io(_) | BadMagic { .. } | TruncatedFile | LabelOutOfRange { .. } | DimensionMismatch { .. } => EXIT_DATA,
                NotPositiveDefinite | NotConverged { .. } | SingularSystem | DegenerateBound { .. } | DivergenceDetected { .. } => {
                    EXIT_NUMERIC
                }
                FractionOutOfRange(_) | EmptyIndexSet | InvalidArgument(_) => EXIT_USAGE,
            };
        }
    }
    EXIT_USAGE
}
