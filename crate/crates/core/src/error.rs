use thiserror::Error;

/// Errors raised by the library.
///
/// The variants mirror the failure classes the CLI maps onto exit codes:
/// configuration/input problems, resource limits, and broken internal
/// invariants.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("out-of-order round: {0}")]
    Sequencing(String),

    #[error("invalid query: {0}")]
    Query(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
