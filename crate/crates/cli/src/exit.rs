use std::fmt;

use stitchwork_core::Error;

pub const OK: i32 = 0;
pub const IO: i32 = 2;
pub const USAGE: i32 = 3;
pub const NUMERICAL: i32 = 4;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: IO,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: NUMERICAL,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Io { .. } | Error::Format { .. } | Error::Json(_) => Self::io(message),
            Error::NonFinite { .. } => Self::numerical(message),
            Error::InvalidShape(_) | Error::Contract(_) | Error::InvalidArgument(_) | Error::Unsupported(_) => Self::usage(message),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_error_kind() {
        let io = Error::io("x", std::io::Error::from(std::io::ErrorKind::NotFound));
        assert_eq!(CliError::from(io).code, IO);
        assert_eq!(CliError::from(Error::invalid("bad")).code, USAGE);
        let nan = Error::NonFinite {
            component: "cyc1".into(),
        };
        let e = CliError::from(nan);
        assert_eq!(e.code, NUMERICAL);
        assert!(e.message.contains("cyc1"));
    }
}
