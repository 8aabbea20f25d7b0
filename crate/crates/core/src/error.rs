use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incremental investment was zero or negative, so ROI has no value.
    #[error("ROI undefined: incremental investment {0} is not positive")]
    UndefinedRoi(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("missing treatment arm: {0}")]
    InsufficientArm(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    /// Promotion cost is at least twice the revenue per purchase; the
    /// retrospective sign rule for incremental loss has no threshold in (0, 1).
    #[error("degenerate economics: 2*R1 = {} <= C = {c}", 2.0 * r1)]
    DegenerateEconomics { r1: f64, c: f64 },

    #[error("instance too large for exhaustive search: n = {n} > {max}")]
    SizeLimit { n: usize, max: usize },

    #[error("curve cannot be normalized: total incremental effect {0} <= 0")]
    Normalization(f64),

    #[error("curve fit failed: {0}")]
    FitFailure(String),

    #[error("missing score magnitudes: {0}")]
    MissingMagnitudes(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unsupported document version {found} (expected {expected})")]
    UnknownVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
