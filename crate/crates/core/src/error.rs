use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: unsupported dtype: {detail}")]
    DType { op: &'static str, detail: String },

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("no adjoint registered for op `{0}`")]
    MissingAdjoint(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("integration blowup at observation {obs}, step {step}: {detail}")]
    Blowup {
        obs: usize,
        step: usize,
        detail: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("{context}: {source}")]
    Trajectory {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("sampler aborted: {0}")]
    SamplerAbort(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn dtype(op: &'static str, detail: impl Into<String>) -> Self {
        Error::DType {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(offset: usize, detail: impl Into<String>) -> Self {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }

    /// Wraps an error with a short location description (trajectory index, sample id).
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Trajectory {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True when the error (or the error it wraps) came from a non-finite solver state.
    pub fn is_blowup(&self) -> bool {
        match self {
            Error::Blowup { .. } | Error::NonFinite(_) => true,
            Error::Trajectory { source, .. } => source.is_blowup(),
            _ => false,
        }
    }
}
