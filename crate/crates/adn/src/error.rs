use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] adn_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code: 2 configuration, 3 data, 4 numerical divergence,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use adn_core::Error as C;
        match self {
            Error::Config(_) | Error::Core(C::Config(_)) => 2,
            Error::Io { .. } | Error::Parse { .. } | Error::Core(C::Data(_)) | Error::Core(C::Index { .. }) => 3,
            Error::Core(C::Divergence(_)) => 4,
            Error::Core(_) => 1,
        }
    }
}

/// Attach a path to IO errors.
pub(crate) trait IoContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
