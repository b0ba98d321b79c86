use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the modeling toolkit.
///
/// Variants split into input problems (bad geometry, schema mismatch, too few
/// points) and numeric problems (singular systems, solver failures). The CLI
/// maps the first group to exit code 1 and the second to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("coordinates look like longitude/latitude ({0}); reproject to a planar CRS in meters")]
    Unprojected(String),

    #[error("layer `{layer}` has {available} points but {required} are required")]
    InsufficientPoints {
        layer: String,
        available: usize,
        required: usize,
    },

    #[error("naming conflict: `{0}` is used more than once")]
    NamingConflict(String),

    #[error("not enough cells: {n} cells cannot each have {k} distinct neighbors")]
    NotEnoughCells { n: usize, k: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("zero variance: {0} is constant, statistic undefined")]
    ZeroVariance(String),

    #[error("collinear columns: {}", .0.join(", "))]
    Collinear(Vec<String>),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("parameter {name} = {value} is outside the admissible interval ({lower}, {upper})")]
    Domain {
        name: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    /// True for failures caused by numerics rather than by the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Collinear(_))
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            message: message.to_string(),
        }
    }
}
