use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate geometry: target coincides with anchor {anchor}")]
    DegenerateGeometry { anchor: usize },

    #[error("singular geometry: condition estimate {condition:e} exceeds {limit:e}")]
    SingularGeometry { condition: f64, limit: f64 },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("{method}: {failures} of {trials} trials singular at sweep value {value}")]
    TooManyFailures {
        method: String,
        value: f64,
        failures: usize,
        trials: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
