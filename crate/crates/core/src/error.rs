use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Selective risk requested for a run where nothing was accepted.
    #[error("selective risk is undefined: no step was accepted")]
    UndefinedRisk,

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    /// Past segment has zero range, min-max scaling is undefined.
    #[error("degenerate scale for series `{id}`: past min equals max ({value})")]
    DegenerateScale { id: String, value: f64 },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("enumeration budget exceeded: {needed} assignments > limit {limit}")]
    BudgetExceeded { needed: u128, limit: u128 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::UndefinedRisk => "undefined_risk",
            Error::Diverged { .. } => "diverged",
            Error::DegenerateScale { .. } => "degenerate_scale",
            Error::Parse { .. } => "parse",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
