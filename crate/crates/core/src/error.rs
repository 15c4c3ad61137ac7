use thiserror::Error;

/// Errors raised anywhere in the evaluation pipeline.
///
/// Variants are grouped by who is at fault: configuration and data problems
/// map to a usage exit code in the CLI, numeric and estimation failures to a
/// runtime exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation at record {record}: attribute `{attribute}` has unknown label `{label}`")]
    SchemaViolation {
        record: usize,
        attribute: String,
        label: String,
    },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("column not found: {0}")]
    ColumnNotFound(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("model spec error: {0}")]
    Spec(String),

    #[error("fold construction error: {0}")]
    Folds(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category used in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SchemaViolation { .. } => "schema_violation",
            Error::InvalidSchema(_) => "invalid_schema",
            Error::Inconsistent(_) => "inconsistent",
            Error::Data(_) => "data",
            Error::ColumnNotFound(_) => "column_not_found",
            Error::Config(_) => "config",
            Error::Parameter(_) => "parameter",
            Error::Domain(_) => "domain",
            Error::Numeric(_) => "numeric",
            Error::Estimation(_) => "estimation",
            Error::Inference(_) => "inference",
            Error::Spec(_) => "spec",
            Error::Folds(_) => "folds",
            Error::Sampling(_) => "sampling",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 for usage, config and data errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SchemaViolation { .. }
            | Error::InvalidSchema(_)
            | Error::Inconsistent(_)
            | Error::Data(_)
            | Error::ColumnNotFound(_)
            | Error::Config(_)
            | Error::Parameter(_)
            | Error::Spec(_)
            | Error::Sampling(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::Domain(_)
            | Error::Numeric(_)
            | Error::Estimation(_)
            | Error::Inference(_)
            | Error::Folds(_)
            | Error::UndefinedMetric(_)
            | Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
