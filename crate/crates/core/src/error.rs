use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in {func}: {msg}")]
    Domain { func: &'static str, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("member {member} has zero probability for class {class}; apply central_smooth before the Dirichlet NLL")]
    ZeroProbability { member: usize, class: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("measure `{measure}` is not available for {kind} models")]
    UnsupportedMeasure { kind: &'static str, measure: &'static str },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(func: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain { func, msg: msg.into() }
    }
}
