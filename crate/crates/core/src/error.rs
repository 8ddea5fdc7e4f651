use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {len} regions")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("region {0} assigned to both states and inputs")]
    OverlappingPartition(usize),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I - Q is singular (smallest singular value {min_singular_value:e})")]
    Singular { min_singular_value: f64 },

    #[error("trajectory diverged at step {step}")]
    Unstable { step: usize },

    #[error("no reference entries for task '{0}'")]
    EmptyDatabase(String),

    #[error("duplicate entry for {0}")]
    Duplicate(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },
}

impl Error {
    /// Stable machine-readable code, printed by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape_mismatch",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::OverlappingPartition(_) => "overlapping_partition",
            Error::InvalidPartition(_) => "invalid_partition",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Singular { .. } => "singular_system",
            Error::Unstable { .. } => "unstable",
            Error::EmptyDatabase(_) => "empty_database",
            Error::Duplicate(_) => "duplicate_entry",
            Error::Layout(_) => "layout",
            Error::LinearProgram(_) => "linear_program",
            Error::Io { .. } => "io",
            Error::Format { .. } => "malformed_input",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, message: impl ToString) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            message: message.to_string(),
        }
    }
}
