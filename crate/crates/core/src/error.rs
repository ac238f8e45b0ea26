use std::path::PathBuf;

use thiserror::Error;

use crate::ingest::{Gender, GroupInterval};

pub type Result<T> = std::result::Result<T, Error>;

/// Broad class of a failure, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed, missing or inconsistent input data.
    Data,
    /// A numeric precondition or model-domain violation.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("duplicate key: year {year}, group {group}, gender {gender}")]
    DuplicateKey {
        year: i32,
        group: GroupInterval,
        gender: Gender,
    },

    #[error("duplicate year {0}")]
    DuplicateYear(i32),

    #[error("dollar basis conflict: table is {expected}, row {row} is {found}")]
    BasisConflict {
        row: usize,
        expected: String,
        found: String,
    },

    #[error("key mismatch: {0}")]
    KeyMismatch(String),

    #[error("undefined mean for year {year}, group {group}: both averaging bases are zero")]
    UndefinedMean { year: i32, group: GroupInterval },

    #[error("division by zero: {0}")]
    Division(String),

    #[error("no population entry for year {year}, group {group}")]
    Join { year: i32, group: GroupInterval },

    #[error("domain error{}: {message}", year.map(|y| format!(" in {y}")).unwrap_or_default())]
    Domain { year: Option<i32>, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("rank-deficient design: {0}")]
    Rank(String),

    #[error("missing key: {0}")]
    Key(String),

    #[error("invalid data: {0}")]
    Invalid(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain { .. }
            | Error::Config(_)
            | Error::Normalization(_)
            | Error::Fit(_)
            | Error::Rank(_)
            | Error::Division(_)
            | Error::UndefinedMean { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn domain(message: impl Into<String>) -> Self {
        Error::Domain {
            year: None,
            message: message.into(),
        }
    }

    /// Attaches a year to a domain error raised inside a fold.
    pub(crate) fn in_year(self, year: i32) -> Self {
        match self {
            Error::Domain { year: None, message } => Error::Domain {
                year: Some(year),
                message,
            },
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
