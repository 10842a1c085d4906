use thiserror::Error;

/// Errors produced by scenario loading, simulation setup and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// The scenario or experiment document does not match its schema.
    #[error("invalid `{field}`: {reason}")]
    Schema { field: String, reason: String },

    /// The document could not be parsed at all.
    #[error("parse error: {0}")]
    Parse(String),

    /// The cell grid does not tile the walkable area.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A query point lies outside the walkable area.
    #[error("point ({x:.3}, {y:.3}) is outside the walkable area")]
    OutOfBounds { x: f64, y: f64 },

    /// Unknown cell or exit index.
    #[error("{kind} id {id} out of range (have {len})")]
    InvalidId { kind: &'static str, id: usize, len: usize },

    /// A run was configured in a way that cannot be simulated.
    #[error("configuration error: {0}")]
    Config(String),

    /// The controller produced a non-finite attribute; the cycle is aborted.
    #[error("controller fault: {0}")]
    ControllerFault(String),

    /// Non-positive argument to a logarithmic path-loss formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// The run log handed to post-processing is empty.
    #[error("empty run log")]
    EmptyLog,

    /// The optimizer found no viable candidate within its budget.
    #[error("no viable solution after {evaluations} evaluations")]
    NoViableSolution { evaluations: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
