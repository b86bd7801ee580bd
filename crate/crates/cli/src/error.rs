use std::fmt;

use levaudit_core::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_MALFORMED: i32 = 2;
pub const EXIT_RANK_DEFICIENT: i32 = 3;
pub const EXIT_CG_STRICT: i32 = 4;
pub const EXIT_TOO_FEW_SHADOWS: i32 = 5;
pub const EXIT_OUTPUT_EXISTS: i32 = 6;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_MALFORMED, message)
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(EXIT_MALFORMED, format!("malformed input: {}", message.into()))
    }

    /// Maps a library error raised while running `stage`.
    pub fn core(stage: &str, e: Error) -> Self {
        let code = match &e {
            Error::Malformed(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::DimensionMismatch(_)
            | Error::InvalidArgument(_)
            | Error::NotASimplex { .. } => EXIT_MALFORMED,
            Error::RankDeficient { .. } => EXIT_RANK_DEFICIENT,
            Error::TooFewShadows { .. } => EXIT_TOO_FEW_SHADOWS,
            _ => EXIT_FAILURE,
        };
        Self::new(code, format!("{stage}: {e}"))
    }

    /// Like [`CliError::core`], but every failure other than rank deficiency
    /// counts as malformed input.
    pub fn loading(what: &str, e: Error) -> Self {
        match e {
            Error::RankDeficient { .. } => Self::core(what, e),
            e => Self::new(EXIT_MALFORMED, format!("{what}: {e}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_FAILURE, format!("io error: {e}"))
    }
}
