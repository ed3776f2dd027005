use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("schema error: column `{column}` not found in {path}")]
    Schema { column: String, path: PathBuf },

    #[error("parse error in {path} at data row {row}: {detail}")]
    Parse {
        path: PathBuf,
        row: usize,
        detail: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("degenerate split: {train} train / {test} test examples")]
    DegenerateSplit { train: usize, test: usize },

    #[error(
        "batch generation exhausted after {rejections} consecutive duplicates \
         ({found} of {requested} batches of size {batch_size} from n = {n})"
    )]
    Exhausted {
        n: usize,
        batch_size: usize,
        requested: usize,
        found: usize,
        rejections: usize,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line front end:
    /// 1 config, 2 data, 3 numeric, 4 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Exhausted { .. } => 1,
            Error::Data(_)
            | Error::Schema { .. }
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::DegenerateSplit { .. }
            | Error::Io { .. } => 2,
            Error::Shape { .. } | Error::Numeric(_) => 3,
            Error::Verification(_) => 4,
        }
    }
}
