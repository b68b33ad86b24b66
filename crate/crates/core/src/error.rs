use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec at edge `{edge}`: {reason}")]
    InvalidEdge { edge: String, reason: String },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("unknown edge `{0}`")]
    UnknownEdge(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite or divergent energy {energy} at step {step} (layer `{layer}`)")]
    Divergence {
        step: usize,
        layer: String,
        energy: f64,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}: energy {energy} at step {step} (layer `{layer}`)")]
    TrainingDivergence {
        epoch: usize,
        batch: usize,
        step: usize,
        layer: String,
        energy: f64,
    },

    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    IdxMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated IDX file {path}: expected {expected} payload bytes, found {found}")]
    IdxTruncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("class {0} has no examples")]
    EmptyClass(usize),

    #[error("checkpoint has bad magic bytes")]
    CheckpointMagic,

    #[error("unsupported checkpoint version {found} (reader supports {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("truncated checkpoint: {0}")]
    CheckpointTruncated(String),

    #[error("malformed checkpoint header: {0}")]
    CheckpointHeader(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidSpec(_)
            | Error::InvalidEdge { .. }
            | Error::UnknownLayer(_)
            | Error::UnknownEdge(_)
            | Error::InvalidArgument(_) => 2,
            Error::Divergence { .. } | Error::TrainingDivergence { .. } => 4,
            _ => 3,
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            4 => "divergence",
            _ => "data",
        }
    }
}
