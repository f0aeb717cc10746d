use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A portfolio CSV row that could not be parsed. `row` is the 1-based
    /// line number in the file (the header is line 1).
    #[error("portfolio row {row}: {message}")]
    Parse { row: usize, message: String },

    /// An invariant breach on loaded or constructed data, naming the field
    /// and, where applicable, the offending customer.
    #[error("invalid {field}{}: {message}", .customer_id.map(|id| format!(" (customer {id})")).unwrap_or_default())]
    Validation {
        field: &'static str,
        customer_id: Option<u64>,
        message: String,
    },

    /// An argument outside an operation's domain (delta out of bounds,
    /// vector length mismatch, ...).
    #[error("{0}")]
    Domain(String),

    /// The requested operation needs a differentiable conversion model;
    /// callers holding a step model should use the GA or the oracle.
    #[error("unsupported model for {0}: step model is not differentiable, use the GA or oracle")]
    UnsupportedModel(&'static str),

    /// Exhaustive search refused: the grid is larger than the configured cap.
    #[error("exhaustive search over {combinations} combinations exceeds the cap of {cap}; raise max_combinations or shrink the grid")]
    CapExceeded { combinations: u128, cap: u64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(
        field: &'static str,
        customer_id: Option<u64>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            field,
            customer_id,
            message: message.into(),
        }
    }
}
