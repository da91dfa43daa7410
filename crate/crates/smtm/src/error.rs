use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("manifest error at layer {layer}: {msg}")]
    ManifestLayer { layer: usize, msg: String },

    #[error("model must contain at least one exit point")]
    NoExitPoint,

    #[error("weight blob size mismatch: expected {expected} bytes, got {actual}")]
    WeightSize { expected: u64, actual: u64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("non-finite value produced at layer {layer}")]
    NonFinite { layer: usize },

    #[error("forward session already finished")]
    SessionFinished,

    #[error("need at least {needed} entries, got {got}")]
    Arity { needed: usize, got: usize },

    #[error("memory integrity violated: {0}")]
    Integrity(String),

    #[error("class id {class} out of range (num classes {num_classes})")]
    ClassRange { class: u32, num_classes: u32 },

    #[error("state error: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("trace format error: {0}")]
    TraceFormat(String),

    #[error("center store format error: {0}")]
    CenterFormat(String),

    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_frame(frame: usize, source: Error) -> Self {
        Error::AtFrame {
            frame,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
