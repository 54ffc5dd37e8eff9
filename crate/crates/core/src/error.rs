use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{features} feature rows but {labels} labels")]
    LabelCount { features: usize, labels: usize },

    #[error("class {0} is not present in any split or has no semantic row")]
    UnknownClass(usize),

    #[error("class {0} appears in more than one of source/target")]
    OverlappingSplits(usize),

    #[error("training row {row} is labeled with non-source class {class}")]
    NonSourceLabel { row: usize, class: usize },

    #[error("validation class {0} is not a source class")]
    ValNotSource(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("trace does not match parameters: {0}")]
    StaleTrace(String),

    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl Error {
    /// Short stable identifier used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Solver(_) => "solver",
            Error::MissingFile(_) => "missing_file",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::LabelCount { .. } => "label_count",
            Error::UnknownClass(_) => "unknown_class",
            Error::OverlappingSplits(_) => "overlapping_splits",
            Error::NonSourceLabel { .. } => "non_source_label",
            Error::ValNotSource(_) => "val_not_source",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::StaleTrace(_) => "stale_trace",
            Error::Invalid(_) => "invalid",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
