use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NvError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported electron branch m = {0}; only m = 0 and m = +1 are implemented")]
    UnsupportedBranch(i32),

    #[error("time grid too coarse: step {actual_ms:.6e} ms exceeds required {required_ms:.6e} ms")]
    GridTooCoarse { required_ms: f64, actual_ms: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no revival beyond t = 0 (small-field regime); re-measure with a bias field")]
    NoRevival,

    #[error("insufficient envelope: {found} usable peaks, need at least 3")]
    InsufficientEnvelope { found: usize },

    #[error("no 1/e crossing before the first minimum")]
    CrossingNotFound,

    #[error("undefined direction for zero field")]
    ZeroField,

    #[error("insensitive interrogation time: sin(2πτ/T_R) = 0")]
    InsensitiveTau,

    #[error("serialization: {0}")]
    Serde(String),
}

impl NvError {
    /// Whether this error comes from a bad configuration rather than a
    /// physical constraint of the inputs.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            NvError::InvalidConfig(_) | NvError::Serde(_) | NvError::Shape(_)
        )
    }
}

impl From<serde_json::Error> for NvError {
    fn from(e: serde_json::Error) -> Self {
        NvError::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, NvError>;
