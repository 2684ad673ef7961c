use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Each variant maps onto one CLI exit code, see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// Bad flags, wrong column kinds, mismatched lengths and similar caller mistakes.
    #[error("{0}")]
    Usage(String),

    /// Malformed or unusable input data.
    #[error("{0}")]
    Data(String),

    /// A built-in model could not be fitted to the supplied data.
    #[error("{0}")]
    Fit(String),

    /// The wrapped predict function violated its contract or failed.
    #[error("{0}")]
    Adapter(String),

    #[error("{0}")]
    Io(String),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn adapter(msg: impl Into<String>) -> Self {
        Error::Adapter(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) | Error::Fit(_) => 2,
            Error::Adapter(_) => 3,
            Error::Io(_) => 4,
        }
    }

    /// Prefixes the message with extra context, keeping the variant.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Usage(m) => Error::Usage(format!("{ctx}: {m}")),
            Error::Data(m) => Error::Data(format!("{ctx}: {m}")),
            Error::Fit(m) => Error::Fit(format!("{ctx}: {m}")),
            Error::Adapter(m) => Error::Adapter(format!("{ctx}: {m}")),
            Error::Io(m) => Error::Io(format!("{ctx}: {m}")),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
