use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("parameter outside its domain: {0}")]
    Domain(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("singular reparameterization: {0}")]
    SingularMap(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("inference unavailable: {reason} (condition number {condition:.3e})")]
    InferenceUnavailable { reason: String, condition: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Data { line: Option<usize>, message: String },

    #[error("study failed: {0}")]
    Study(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            got,
        }
    }

    pub(crate) fn data(line: impl Into<Option<usize>>, message: impl Into<String>) -> Self {
        Error::Data {
            line: line.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Unsupported(_) | Error::Domain(_) | Error::Dimension { .. } => 2,
            Error::Data { .. } | Error::Io(_) | Error::Json(_) => 3,
            Error::Optimization(_) | Error::Evaluation(_) | Error::Study(_) => 4,
            Error::InferenceUnavailable { .. } | Error::SingularMap(_) => 5,
        }
    }
}
