use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate cross-section: {0}")]
    DegenerateCrossSection(String),

    #[error("empty long/short leg")]
    EmptyLeg,

    #[error("degenerate benchmark: historical-average RMSE is zero")]
    DegenerateBenchmark,

    #[error("degenerate residuals: zero variance with nonzero mean")]
    DegenerateResiduals,

    #[error("rank deficient design: column {column} is collinear with earlier columns")]
    RankDeficient { column: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::Parse { .. } | Error::Data(_) | Error::Dimension { .. } | Error::Io { .. } | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
