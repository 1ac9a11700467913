use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by `{op}` (primitive #{index})")]
    NonFinite { op: &'static str, index: usize },

    #[error("unknown parameter `{0}`")]
    MissingParam(String),

    #[error("program output is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),

    #[error("ODE state became non-finite at t = {time}")]
    Blowup { time: f64 },

    #[error("sample {sample}: {source}")]
    InSample {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Divergence { epoch: usize, batch: usize, reason: String },

    #[error("no draw accepted within delta after {attempts} attempts (acceptance rate < {rate_bound:.3e})")]
    NoAcceptance { attempts: usize, rate_bound: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("all mixture fits failed: {0}")]
    SelectionFailed(String),

    #[error("archive format version {found} is not supported (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_) | Error::Parse { .. } | Error::Version { .. })
    }
}
