use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input the test cannot be computed on (zero variance, single class, empty cell).
    #[error("untestable input: {0}")]
    Untestable(String),

    #[error("contingency table has an empty {axis} (index {index})")]
    EmptyMargin { axis: &'static str, index: usize },

    #[error("singular weighted normal equations: columns {columns:?} are collinear with earlier columns")]
    Singular { columns: Vec<usize> },

    #[error("row {row}, column `{column}`: {message}")]
    Schema {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing required columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),

    #[error("cohort has no gold-standard saturation (w_true/epsilon); skip measurement metrics")]
    NoGoldStandard,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("params file: {0}")]
    Params(#[from] toml::de::Error),
}

impl Error {
    /// Process exit code: 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Singular { .. } | Error::Untestable(_) => 2,
            _ => 1,
        }
    }
}
