use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum GasError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected a scalar, got shape {0:?}")]
    Rank(Vec<usize>),
    #[error("empty neighborhood: every candidate is masked")]
    EmptyNeighborhood,
    #[error("sequence of length {len} is shorter than filter width {width}")]
    SequenceTooShort { len: usize, width: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate comment id `{0}`")]
    DuplicateId(String),
    #[error("unknown {kind} `{id}`")]
    Lookup { kind: &'static str, id: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
}

impl GasError {
    /// Short stable tag used in machine-parsable failure lines.
    pub fn kind(&self) -> &'static str {
        match self {
            GasError::Shape { .. } => "shape",
            GasError::Rank(_) => "rank",
            GasError::EmptyNeighborhood => "empty-neighborhood",
            GasError::SequenceTooShort { .. } => "sequence-too-short",
            GasError::NonFinite(_) => "non-finite",
            GasError::Parse { .. } => "parse",
            GasError::DuplicateId(_) => "duplicate-id",
            GasError::Lookup { .. } => "lookup",
            GasError::Config(_) => "config",
            GasError::Incompatible(_) => "incompatible",
            GasError::Corrupt(_) => "corrupt",
            GasError::UndefinedMetric(_) => "undefined-metric",
            GasError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, GasError>;
