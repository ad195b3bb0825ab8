use std::path::PathBuf;

use crate::container::ContainerError;
use crate::lbfgs::OptimError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {dims:?}: {reason}")]
    InvalidShape { dims: Vec<usize>, reason: &'static str },

    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid network: {0}")]
    Network(String),

    #[error("layer `{layer}`: expected weight shape {expected:?}, container holds {actual:?}")]
    WeightShape {
        layer: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("T < Δt: {frames} frames cannot fill a window of {delta_t}")]
    TooFewFrames { frames: usize, delta_t: usize },

    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    #[error("missing metadata sidecar {0}")]
    MissingMetadata(PathBuf),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },

    #[error("frame {index} missing from sequence ({path})")]
    MissingFrame { index: usize, path: PathBuf },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error(transparent)]
    Optim(#[from] OptimError),

    #[error("{context}")]
    Frame {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    /// Innermost error, looking through frame context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Frame { source, .. } => source.root(),
            other => other,
        }
    }
}
