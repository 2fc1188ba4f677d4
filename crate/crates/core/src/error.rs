use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("alpha {alpha} keeps no tetrahedron")]
    EmptyReconstruction { alpha: f64 },
    #[error("vertex {0} has no neighbours")]
    IsolatedVertex(usize),
    #[error("mesh carries no vertex colors")]
    MissingColors,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("need at least {needed} correspondences, got {got}")]
    NotEnoughPoints { needed: usize, got: usize },
    #[error("no model reached {needed} inliers (best had {best})")]
    NoConsensus { needed: usize, best: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss is not differentiable at {0}")]
    NonDifferentiablePoint(String),
    #[error("image keys do not match: {}", .0.join(", "))]
    KeyMismatch(Vec<String>),
    #[error("schema error at `{pointer}`: {message}")]
    Schema { pointer: String, message: String },
    #[error("no valid object placement after {0} attempts")]
    PlacementFailure(usize),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("png: {0}")]
    Png(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable identifier used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::UnknownCategory(_) => "UnknownCategory",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::EmptyReconstruction { .. } => "EmptyReconstruction",
            Error::IsolatedVertex(_) => "IsolatedVertex",
            Error::MissingColors => "MissingColors",
            Error::DegenerateConfiguration(_) => "DegenerateConfiguration",
            Error::NotEnoughPoints { .. } => "NotEnoughPoints",
            Error::NoConsensus { .. } => "NoConsensus",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonDifferentiablePoint(_) => "NonDifferentiablePoint",
            Error::KeyMismatch(_) => "KeyMismatch",
            Error::Schema { .. } => "SchemaError",
            Error::PlacementFailure(_) => "PlacementFailure",
            Error::Parse { .. } => "ParseError",
            Error::Png(_) => "PngError",
            Error::Io { .. } => "IoError",
        }
    }

    /// True for errors caused by bad input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::UnknownCategory(_)
                | Error::MissingColors
                | Error::ShapeMismatch(_)
                | Error::KeyMismatch(_)
                | Error::Schema { .. }
                | Error::Parse { .. }
                | Error::Png(_)
                | Error::Io { .. }
        )
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}
