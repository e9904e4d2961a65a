use std::path::PathBuf;

/// Errors surfaced by the harness and the command line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] densesplat_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// Process exit code: 2 for bad arguments or configuration, 3 when
    /// tracking is lost, 4 for file problems, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        use densesplat_core::Error as Core;
        match self {
            Error::Core(Core::TrackingLost { .. } | Core::InsufficientTexture { .. }) => 3,
            Error::Core(Core::InvalidArgument(_)) | Error::Config(_) => 2,
            Error::Core(_) => 1,
            Error::Io { .. } | Error::Format { .. } => 4,
            Error::Context { source, .. } => source.exit_code(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
