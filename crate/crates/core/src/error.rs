use thiserror::Error;

use crate::time::TimeIndex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    /// Both the standard deviation and the IQR of the sample are zero.
    #[error("degenerate sample: zero spread, an explicit fallback bandwidth is required")]
    DegenerateSample,

    #[error("grid too narrow: KDE mass on grid is {mass:.4}, below 0.99")]
    GridTooNarrow { mass: f64 },

    #[error("densities are defined on different grids")]
    GridMismatch,

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing lag {lag} of series `{series}` for target time {target}: no density at {missing}")]
    MissingLag {
        series: String,
        target: TimeIndex,
        lag: usize,
        missing: TimeIndex,
    },

    #[error("no usable target times: {0}")]
    NoUsableTimes(String),

    #[error("history is empty: no observation strictly before {0}")]
    EmptyHistory(TimeIndex),

    #[error("model not identifiable: {equations} residual equations for {parameters} parameters")]
    NotIdentifiable { equations: usize, parameters: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotIdentifiable { .. } => 3,
            Error::MissingLag { .. } | Error::NoUsableTimes(_) | Error::EmptyHistory(_) => 4,
            Error::DegenerateSample | Error::GridTooNarrow { .. } | Error::Numerical(_) => 5,
            Error::InvalidGrid(_)
            | Error::InvalidDensity(_)
            | Error::InvalidSample(_)
            | Error::GridMismatch
            | Error::InvalidSpec(_)
            | Error::InvalidConfig(_)
            | Error::Schema(_)
            | Error::Io(_) => 2,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Schema(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Schema(err.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(err: toml::de::Error) -> Self {
        Error::Schema(err.to_string())
    }
}
