use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("not a {format} file")]
    BadMagic { format: &'static str },

    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u16 },

    #[error("unsupported {format} flags {flags:#06x}")]
    UnsupportedFlags { format: &'static str, flags: u16 },

    #[error("bad metadata: {0}")]
    BadMeta(String),

    #[error("corrupt payload (checksum {stored:08x}, computed {computed:08x})")]
    CorruptPayload { stored: u32, computed: u32 },

    #[error("unexpected end of stream")]
    UnexpectedEnd,

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dimension chain violation at layer {layer}: d_in {got} does not match previous d_out {expected}")]
    DimensionChain {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("unknown activation '{0}' (supported: identity, relu, tanh)")]
    UnknownActivation(String),

    #[error("tap out of range: {tap} (network has {layers} layers)")]
    TapOutOfRange { tap: usize, layers: usize },

    #[error("zero {what} vector at probe index {index}")]
    ZeroVector { what: &'static str, index: usize },

    #[error("incomparable graphs: {0}")]
    Incomparable(String),

    #[error("degenerate {0}")]
    Degenerate(&'static str),

    #[error("candidate '{id}': {source}")]
    Candidate {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("k out of range: {k} (candidates: {len})")]
    KOutOfRange { k: usize, len: usize },

    #[error("missing relevance set for query '{0}'")]
    MissingQuery(String),

    #[error("asymmetric matrix at ({row}, {col}): difference {diff:e}")]
    Asymmetric { row: usize, col: usize, diff: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }

    /// True for failures caused by bad input rather than by the environment
    /// or by a degenerate computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io(_) | Error::Degenerate(_) | Error::ZeroVector { .. } => false,
            Error::Candidate { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}

pub(crate) fn map_eof(err: io::Error) -> Error {
    if err.kind() == io::ErrorKind::UnexpectedEof {
        Error::UnexpectedEnd
    } else {
        Error::Io(err)
    }
}
