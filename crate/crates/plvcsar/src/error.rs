use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{}: missing required column `{column}`", path.display())]
    MissingColumn { path: PathBuf, column: String },

    #[error(transparent)]
    Core(#[from] plvcsar_core::Error),

    #[error("writing output: {0}")]
    Output(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use plvcsar_core::Error as C;
        match self {
            Error::Usage(_) => EXIT_USAGE,
            Error::Io { .. } | Error::Parse { .. } | Error::MissingColumn { .. } | Error::Output(_) => EXIT_DATA,
            Error::Core(e) => match e {
                C::Domain { .. } | C::IndexOutOfRange { .. } => EXIT_USAGE,
                C::Dimension { .. }
                | C::InvalidData(_)
                | C::DegenerateDesign { .. }
                | C::DegenerateSupport
                | C::UnusableInstruments => EXIT_DATA,
                C::SolverFailure { .. }
                | C::Singular { .. }
                | C::NoFeasibleKnots { .. }
                | C::SingularSpatialFilter { .. }
                | C::TooManyFailures { .. } => EXIT_NUMERICAL,
            },
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Output(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Output(e.to_string())
    }
}
