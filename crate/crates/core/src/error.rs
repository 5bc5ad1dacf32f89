use thiserror::Error;

/// Errors raised by the toolkit. Every variant names the violated precondition.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("window is not haloed: need halo >= {required}, have {available}")]
    MissingHalo { required: f64, available: f64 },

    #[error("pattern has {len} points, limit is {limit}")]
    TooLarge { len: usize, limit: usize },

    #[error("duplicate point at index {0}; patterns must be simple")]
    DuplicatePoint(usize),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("undefined estimate: {0}")]
    Undefined(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config hash mismatch: bound was computed for {bound}, samples belong to {samples}")]
    ConfigMismatch { bound: String, samples: String },

    #[error("invalid config: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<ConfigIssue>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// One violated precondition in an experiment config, located by its path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn ensure(cond: bool, name: &'static str, reason: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(name, reason()))
    }
}
