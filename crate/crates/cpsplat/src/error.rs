use std::fmt;
use std::io;

#[derive(Debug)]
pub enum Error {
    Io {
        path: String,
        source: io::Error,
    },
    Core(cpsplat_core::Error),
    /// Malformed file contents.
    Format {
        what: String,
        msg: String,
    },
    Config {
        line: usize,
        msg: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn format(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{path}: {source}"),
            Error::Core(e) => write!(f, "{e}"),
            Error::Format { what, msg } => write!(f, "malformed {what}: {msg}"),
            Error::Config { line, msg } => write!(f, "config line {line}: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::Core(e) => Some(e),
            _ => None,
        }
    }
}

impl From<cpsplat_core::Error> for Error {
    fn from(e: cpsplat_core::Error) -> Self {
        Error::Core(e)
    }
}
