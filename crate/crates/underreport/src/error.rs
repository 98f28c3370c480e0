use std::io;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: no header row", .0.display())]
    MissingHeader(PathBuf),

    #[error("column {0:?} appears more than once with different contents")]
    DuplicateHeader(String),

    #[error("column {0:?} not found in header")]
    MissingColumn(String),

    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    NonNumeric { row: usize, column: String, value: String },

    #[error("group column {column:?} is not binary after encoding: {detail}")]
    NonBinaryGroup { column: String, detail: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed bundle: {0}")]
    Bundle(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] underreport_core::Error),

    #[error("{failed} of {total} cells failed")]
    TooManyFailures { failed: usize, total: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit status: 2 for bad input data, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) if e.is_numerical() => 3,
            Error::TooManyFailures { .. } => 3,
            _ => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::MissingColumn("a".into()).exit_code(), 2);
        assert_eq!(Error::Core(underreport_core::Error::Singular("x".into())).exit_code(), 3);
        assert_eq!(Error::Core(underreport_core::Error::EmptyGroup(1)).exit_code(), 2);
        let e = Error::io("nope.csv", io::Error::from(io::ErrorKind::NotFound));
        assert!(matches!(e, Error::MissingFile(_)));
    }
}
