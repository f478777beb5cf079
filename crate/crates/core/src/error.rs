use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("support violation at (s={state}, a={action}): occupancy {occupancy:e} with zero data mass")]
    Support {
        state: usize,
        action: usize,
        occupancy: f64,
    },

    #[error("record {index} ({state}, {action}) -> {next} has zero model probability")]
    ZeroProbability {
        index: usize,
        state: usize,
        action: usize,
        next: usize,
    },

    #[error("base model has zero probability at ({state}, {action}) -> {next}")]
    ZeroBase {
        state: usize,
        action: usize,
        next: usize,
    },

    #[error("unobserved state-action pairs: {0:?}")]
    Unobserved(Vec<(usize, usize)>),

    #[error("rank-deficient system: reciprocal condition {rcond:e} below {threshold:e}")]
    RankDeficient { rcond: f64, threshold: f64 },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config: {0}")]
    Config(String),

    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status: 2 for configuration problems, 3 for failures while computing.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Json(_) => 2,
            Self::Io(_) | Self::Csv(_) => 1,
            Self::Cell { source, .. } if matches!(**source, Self::Config(_)) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Invalid {
        what,
        reason: reason.into(),
    }
}
