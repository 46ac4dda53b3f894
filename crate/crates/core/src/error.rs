use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by tensor ops, losses, and models.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: logarithm of non-positive value {value}")]
    NonPositiveLog { op: &'static str, value: f64 },

    #[error("{op}: empty input")]
    Empty { op: &'static str },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss is not attached to any gradient-requiring leaf")]
    DetachedLoss,

    #[error("variable belongs to tape {found}, not tape {expected}")]
    ForeignVar { expected: u32, found: u32 },

    #[error("spectral convergence is undefined for a silent reference signal")]
    SilentReference,

    #[error("{what}: signal of {len} samples is shorter than {needed}")]
    TooShort {
        what: &'static str,
        len: usize,
        needed: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

pub(crate) fn invalid(op: &'static str, detail: String) -> Error {
    Error::InvalidArgument { op, detail }
}
