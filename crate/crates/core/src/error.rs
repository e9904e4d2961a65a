use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("invalid inverse depth {0}")]
    InvalidDepth(f64),

    #[error("sample ({u}, {v}) is outside the {width}x{height} image")]
    OutOfBounds { u: f64, v: f64, width: usize, height: usize },

    #[error("point is not visible in the target frame")]
    NotVisible,

    #[error("tracking lost: {reason}")]
    TrackingLost { frame: Option<usize>, reason: String },

    #[error("insufficient texture: only {candidates} candidate pixels")]
    InsufficientTexture { candidates: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("scene would be empty after pruning")]
    EmptyScene,

    #[error("non-finite loss; first offending gaussian is #{gaussian:?}")]
    NonFiniteLoss { gaussian: Option<usize> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn lost(reason: impl Into<String>) -> Self {
        Error::TrackingLost { frame: None, reason: reason.into() }
    }

    /// Attaches a frame index to a tracking-lost error; other errors pass through.
    pub fn with_frame(self, index: usize) -> Self {
        match self {
            Error::TrackingLost { reason, .. } => Error::TrackingLost { frame: Some(index), reason },
            other => other,
        }
    }
}
