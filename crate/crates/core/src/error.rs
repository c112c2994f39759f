use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` is not numeric")]
    NonNumericColumn(String),

    #[error("missing value at row {row}, column `{col}`")]
    MissingValue { row: usize, col: String },

    #[error("x and y column selectors overlap")]
    OverlappingSelectors,

    #[error("column selector `{0}` does not resolve to any column")]
    BadSelector(String),

    #[error("no rows left after dropping missing values")]
    EmptyAfterDrop,

    #[error("empty sample")]
    EmptySample,

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension {dim} is not in the {block} block")]
    DimensionNotInBlock { dim: usize, block: &'static str },

    #[error("inconsistent margins: rows sum to {rows}, columns sum to {cols}")]
    InconsistentMargins { rows: u64, cols: u64 },

    #[error("empty p-value list")]
    EmptyInput,

    #[error("p-value {0} carries no attainable support")]
    MissingSupport(usize),

    #[error("invalid level alpha = {0}")]
    InvalidAlpha(f64),

    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),

    #[error("exhaustive enumeration needs {count} items, budget is {budget}")]
    BudgetExceeded { count: String, budget: u64 },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("noise level {0} outside 1..=20")]
    NoiseLevelOutOfRange(u32),

    #[error("invalid study: {0}")]
    InvalidStudy(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
