use thiserror::Error;

#[derive(Debug, Error)]
pub enum LrdError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("inconsistent index window: {0}")]
    Window(String),

    #[error("missing data: {0}")]
    Missing(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl LrdError {
    pub fn domain(msg: impl Into<String>) -> Self {
        LrdError::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        LrdError::Config(msg.into())
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            LrdError::Config(_) | LrdError::Serde(_) => 2,
            LrdError::Domain(_) | LrdError::DimensionMismatch { .. } | LrdError::Window(_) => 3,
            LrdError::Resource(_) | LrdError::Missing(_) | LrdError::Io(_) => 1,
        }
    }
}

impl From<serde_json::Error> for LrdError {
    fn from(e: serde_json::Error) -> Self {
        LrdError::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for LrdError {
    fn from(e: toml::de::Error) -> Self {
        LrdError::Serde(e.to_string())
    }
}

impl From<toml::ser::Error> for LrdError {
    fn from(e: toml::ser::Error) -> Self {
        LrdError::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LrdError>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(LrdError::DimensionMismatch { expected, found })
    }
}
