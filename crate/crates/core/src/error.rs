use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("primitive {op} does not accept {detail}")]
    Unsupported { op: &'static str, detail: String },

    #[error("forward pass poisoned by non-finite value at record {record}")]
    PoisonedTape { record: usize },

    #[error("non-finite cotangent produced at record {record}")]
    NonFiniteCotangent { record: usize },

    #[error("solver blow-up at step {step}")]
    Blowup { step: usize },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dictionary is empty")]
    EmptyDictionary,

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("nothing to diagnose in {0}")]
    NothingToDiagnose(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Stable snake_case identifier of the variant, for machine-readable
    /// reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::Shape { .. } => "shape",
            Error::Unsupported { .. } => "unsupported",
            Error::PoisonedTape { .. } => "poisoned_tape",
            Error::NonFiniteCotangent { .. } => "non_finite_cotangent",
            Error::Blowup { .. } => "blowup",
            Error::Sample { source, .. } => source.kind(),
            Error::Diverged { .. } => "diverged",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Config(_) => "config",
            Error::EmptyDictionary => "empty_dictionary",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::NothingToDiagnose(_) => "nothing_to_diagnose",
        }
    }

    /// Step index of a solver blow-up, looking through sample wrappers.
    pub fn blowup_step(&self) -> Option<usize> {
        match self {
            Error::Blowup { step } => Some(*step),
            Error::Sample { source, .. } => source.blowup_step(),
            _ => None,
        }
    }

    /// True for errors caused by a non-finite forward value or cotangent.
    pub fn is_non_finite(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::PoisonedTape { .. }
            | Error::NonFiniteCotangent { .. }
            | Error::Blowup { .. } => true,
            Error::Sample { source, .. } => source.is_non_finite(),
            _ => false,
        }
    }
}
