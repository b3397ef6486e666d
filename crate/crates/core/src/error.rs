use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid modulus {p}: {reason}")]
    InvalidModulus { p: u64, reason: &'static str },

    #[error("{g} is not a primitive root of {p}")]
    NotPrimitiveRoot { g: u64, p: u64 },

    #[error("invalid config at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("cannot draw {needed} distinct inputs from modulus {p}")]
    BlockTooLong { needed: usize, p: u64 },

    #[error("mismatch sequence needs composite params different from the curriculum params")]
    MismatchSameParams,

    #[error("no pair split with full coverage after {retries} draws")]
    CoverageUnreachable { retries: usize },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss weights sum to zero")]
    ZeroWeights,

    #[error("gradient check failed: max relative error {max_rel:.3e} at `{param}`[{index}] exceeds {tolerance:.1e}")]
    GradCheck { param: String, index: usize, max_rel: f64, tolerance: f64 },

    #[error("token {token} out of range for vocabulary {vocab}")]
    TokenRange { token: usize, vocab: usize },

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("layer {layer} out of range (model has {layers})")]
    LayerRange { layer: usize, layers: usize },

    #[error("probe needs at least two classes")]
    DegenerateProbe,

    #[error("empty evaluation set")]
    EmptyEval,

    #[error("non-finite loss at step {step}; batch written to {}", dump.display())]
    Diverged { step: u64, dump: PathBuf },

    #[error("i/o at step {step:?}: {source}")]
    Io { step: Option<u64>, #[source] source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io { step: None, source }
    }
}

impl Error {
    pub fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { path: path.into(), reason: reason.into() }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    /// Short machine-readable tag, used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidModulus { .. } => "invalid_modulus",
            Error::NotPrimitiveRoot { .. } => "not_primitive_root",
            Error::Config { .. } => "config",
            Error::BlockTooLong { .. } => "block_too_long",
            Error::MismatchSameParams => "mismatch_same_params",
            Error::CoverageUnreachable { .. } => "coverage_unreachable",
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::ZeroWeights => "zero_weights",
            Error::GradCheck { .. } => "grad_check",
            Error::TokenRange { .. } => "token_range",
            Error::SequenceTooLong { .. } => "sequence_too_long",
            Error::Checkpoint(_) => "checkpoint",
            Error::LayerRange { .. } => "layer_range",
            Error::DegenerateProbe => "degenerate_probe",
            Error::EmptyEval => "empty_eval",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
