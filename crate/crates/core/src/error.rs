use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("total conflict between sources (normalization mass {normalization:e})")]
    TotalConflict { normalization: f64 },

    #[error("cannot combine an empty list of masses")]
    EmptyList,

    #[error("frame size mismatch: {left} vs {right}")]
    FrameMismatch { left: usize, right: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("category out of range at row {row}, column `{column}`: {value}")]
    CategoryOutOfRange {
        row: usize,
        column: String,
        value: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("too few samples: {got} (need at least {min})")]
    TooFewSamples { got: usize, min: usize },

    #[error("only one class present")]
    SingleClass,

    #[error("config error: {0}")]
    Config(String),

    #[error("parameter file error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::CategoryOutOfRange { .. }
            | Error::Schema(_)
            | Error::Parse { .. }
            | Error::TooFewSamples { .. }
            | Error::SingleClass
            | Error::Format(_)
            | Error::Io(_)
            | Error::Csv(_) => 3,
            Error::Domain(_)
            | Error::TotalConflict { .. }
            | Error::EmptyList
            | Error::FrameMismatch { .. }
            | Error::Shape { .. }
            | Error::EmptyBatch
            | Error::LengthMismatch { .. } => 4,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            got,
        })
    }
}
