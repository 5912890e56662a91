use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("layer `{layer}`: invalid `{field}`: {message}")]
    InvalidLayer {
        layer: String,
        field: &'static str,
        message: String,
    },

    #[error("duplicate layer name `{0}`")]
    DuplicateLayer(String),

    #[error("weights buffer holds {actual} floats but the manifest addresses {expected}")]
    WeightsLength { expected: usize, actual: usize },

    #[error("sparsity {0} is outside [0, 1]")]
    InvalidSparsity(f64),

    #[error("model has no prunable layers")]
    NoPrunableLayers,

    #[error("mask does not match model: {0}")]
    MaskMismatch(String),

    #[error("malformed mask file: {0}")]
    MaskFormat(String),

    #[error("layer `{layer}` mask is not aligned to 1x4 blocks (row {row}, block {block})")]
    BlockAlignment {
        layer: String,
        row: usize,
        block: usize,
    },

    #[error("layer `{0}` is not a pointwise (1x1, groups=1) convolution")]
    NotPointwise(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("target of {target_mflops} MFLOPs is unreachable: {reason}")]
    Unreachable { target_mflops: f64, reason: String },

    #[error("invalid FLOPs target: {0}")]
    InvalidTarget(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer `{layer}`: operator `{op}` is not supported here")]
    Unsupported { layer: String, op: String },

    #[error("training diverged at epoch {epoch}: {what} is {value}")]
    Divergence {
        epoch: usize,
        what: &'static str,
        value: f64,
    },

    #[error("invalid IDX file {path}: {message}")]
    Idx { path: PathBuf, message: String },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn layer(layer: &str, field: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidLayer {
            layer: layer.to_string(),
            field,
            message: message.into(),
        }
    }
}
