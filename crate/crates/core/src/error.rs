use std::path::PathBuf;

/// Errors raised anywhere in the fuel-flow pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("feature `{0}` is missing")]
    MissingFeature(String),
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: cannot parse `{column}` value {value:?}")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("series of length {len} is shorter than the required {required}")]
    SeriesTooShort { len: usize, required: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("pressure altitude {0} ft outside [-1000, 45000]")]
    AltitudeOutOfRange(f64),
    #[error("true airspeed {0} kt below the 60 kt validity limit")]
    AirspeedTooLow(f64),
    #[error("non-positive baseline prediction {value} at index {index}")]
    NonPositiveBaseline { index: usize, value: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for bad configuration, 3 for data problems,
    /// 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numeric(_) | Error::NonPositiveBaseline { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
