use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `line` is 1-based when known.
    #[error("format error{}: {message}", fmt_location(.path, .line))]
    Format {
        path: Option<PathBuf>,
        line: Option<usize>,
        message: String,
    },

    /// A value outside the domain of a mathematical operation (zero norm,
    /// zero denominator, constant vector, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("external scorer: {0}")]
    Scorer(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A pipeline stage failed; the run stopped there.
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn fmt_location(path: &Option<PathBuf>, line: &Option<usize>) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!(" at {}:{l}", p.display()),
        (Some(p), None) => format!(" in {}", p.display()),
        (None, Some(l)) => format!(" at line {l}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format_at(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: None,
            line: Some(line),
            message: message.into(),
        }
    }

    pub(crate) fn with_path(self, p: impl Into<PathBuf>) -> Self {
        match self {
            Error::Format { path: None, line, message } => Error::Format {
                path: Some(p.into()),
                line,
                message,
            },
            other => other,
        }
    }

    /// Line number carried by a format error.
    pub fn line(&self) -> Option<usize> {
        match self {
            Error::Format { line, .. } => *line,
            _ => None,
        }
    }
}
