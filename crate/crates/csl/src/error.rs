use thiserror::Error;

/// Error type shared by every module. The three variants map onto the CLI
/// exit codes: invalid input → 2, numeric failure → 3, I/O → 4.
#[derive(Debug, Error)]
pub enum CslError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CslError>;

impl CslError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CslError::InvalidInput(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CslError::Numeric(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CslError::InvalidInput(_) => 2,
            CslError::Numeric(_) => 3,
            CslError::Io(_) => 4,
        }
    }
}

impl From<serde_json::Error> for CslError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CslError::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
        } else {
            CslError::InvalidInput(format!("malformed JSON: {e}"))
        }
    }
}
