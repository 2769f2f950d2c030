use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Location of a problem inside a spec file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecLocation {
    pub line: usize,
    pub field: String,
}

impl fmt::Display for SpecLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "field `{}`", self.field)
        } else {
            write!(f, "line {}, field `{}`", self.line, self.field)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("spec error at {at}: {message}")]
    Spec { at: SpecLocation, message: String },

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("data: {0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("recurrence: {0}")]
    Recurrence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { op, detail: detail.into() }
    }

    pub(crate) fn spec(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Spec { at: SpecLocation { line, field: field.into() }, message: message.into() }
    }
}
