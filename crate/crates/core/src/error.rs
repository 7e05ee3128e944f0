use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum GdgmError {
    #[error("{op}: dimension mismatch, expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("integration interval is reversed: t1 = {t1} < t0 = {t0}")]
    Interval { t0: f64, t1: f64 },

    #[error("ODE state diverged (non-finite) at solver step {step}")]
    Divergence { step: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("duplicate transaction id {0}")]
    DuplicateTxn(u64),

    #[error("invalid relation id {0}")]
    InvalidRelation(usize),

    #[error("training set contains a single class ({0}); both classes need at least one labeled node")]
    SingleClass(u8),

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GdgmError>;

pub(crate) fn dim_err(op: &'static str, expected: impl Into<String>, found: impl Into<String>) -> GdgmError {
    GdgmError::Dimension {
        op,
        expected: expected.into(),
        found: found.into(),
    }
}
