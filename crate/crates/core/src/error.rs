use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("point {point} lies outside the domain of {system}")]
    OutsideDomain { system: String, point: String },

    #[error("{system} is an i.i.d. process and has no deterministic map")]
    NoDeterministicMap { system: String },

    #[error("arity mismatch: functional expects {expected} points, got {got}")]
    ArityMismatch { expected: usize, got: usize },

    #[error("observable must be centered (mean_zero) for this estimator")]
    Uncentered,

    #[error("orbit too short: need {needed} points, have {have}")]
    OrbitTooShort { needed: usize, have: usize },

    #[error("tabulated observable queried off-grid at {0} without an interpolation policy")]
    OffGrid(f64),

    #[error("infinite Lipschitz constant in slot {0}")]
    InfiniteLipschitz(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("overflow guard exceeded: |z| n sup|f| = {0:.1} > {1:.1}")]
    OverflowGuard(f64, f64),

    #[error("window {k} exceeds orbit length {len}")]
    WindowTooLong { k: usize, len: usize },

    #[error("operation requires a one-dimensional system")]
    NotOneDimensional,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
