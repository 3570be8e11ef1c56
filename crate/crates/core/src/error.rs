use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter violates its precondition.
    #[error("invalid parameter `{field}`: {rule}")]
    InvalidParameter { field: &'static str, rule: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Config text that is not valid JSON or does not fit the schema.
    #[error("config error at line {line}, column {column}: {message}")]
    Config { line: usize, column: usize, message: String },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("unsupported archive version {found} (this build reads major version {supported})")]
    VersionMismatch { found: u16, supported: u16 },

    #[error("checksum failure in frame {frame} (coil {coil})")]
    Checksum { frame: usize, coil: usize },

    #[error("{0}")]
    Unsupported(String),

    #[error("root finding failed: {0}")]
    NoRoot(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for problems with the caller's input rather than the run itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::Config { .. } | Error::DimensionMismatch(_) | Error::Unsupported(_)
        )
    }


    pub(crate) fn invalid(field: &'static str, rule: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            rule: rule.into(),
        }
    }
}
