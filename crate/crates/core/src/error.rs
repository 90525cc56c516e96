use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An allocation would push tracked bytes over the ceiling (or the
    /// system allocator refused it).
    #[error("out of memory allocating `{tensor}`: requested {requested} bytes with {live} live (ceiling {ceiling})")]
    OutOfMemory {
        tensor: String,
        requested: u64,
        live: u64,
        ceiling: u64,
    },

    #[error("numerical degeneracy: {0}")]
    NumericDegeneracy(String),

    #[error("instance too large for path enumeration: {paths} paths exceed limit {limit}")]
    InstanceTooLarge { paths: u128, limit: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("report serialization: {0}")]
    Report(String),
}

impl Error {
    /// Attaches a tensor name to an out-of-memory error; other variants pass
    /// through untouched.
    pub fn for_tensor(self, name: &str) -> Self {
        match self {
            Error::OutOfMemory {
                requested,
                live,
                ceiling,
                ..
            } => Error::OutOfMemory {
                tensor: name.to_string(),
                requested,
                live,
                ceiling,
            },
            other => other,
        }
    }

    pub fn is_out_of_memory(&self) -> bool {
        matches!(self, Error::OutOfMemory { .. })
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Report(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Report(format!("{other:?}")),
        }
    }
}
