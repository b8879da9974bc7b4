use thiserror::Error;

/// Errors surfaced by the toolkit.
///
/// The CLI maps these onto process exit codes: anything data-shaped
/// (parsing, checkpoints, protocol) is a data error, `NonFinite` and
/// `Diverged` are numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: expected shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("layer {index} ({kind}): {message}")]
    Layer {
        index: usize,
        kind: &'static str,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{op} is not defined for {kind} layers (integer-index inputs are not differentiable)")]
    NotDifferentiable { op: &'static str, kind: &'static str },

    #[error("jacobian would hold {entries} entries, above the cap of {cap}; use a trace estimator instead")]
    JacobianTooLarge { entries: usize, cap: usize },

    #[error("non-finite value produced in {context}")]
    NonFinite { context: String },

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Data(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("server replied with error: {0}")]
    RemoteError(String),

    #[error("experiment: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures that indicate broken numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }
}
