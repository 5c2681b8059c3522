use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("dangling/cyclic node at {path}: {message}")]
    NodeReference { path: String, message: String },

    #[error("class index {class} out of range (n_classes = {n_classes}) at {path}")]
    ClassOutOfRange {
        path: String,
        class: usize,
        n_classes: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite coordinate {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("threshold {threshold} on feature {feature} lies outside the declared bounds [{lo}, {hi}]")]
    ThresholdOutOfBounds {
        feature: usize,
        threshold: f64,
        lo: f64,
        hi: f64,
    },

    #[error("box count exceeds representable range")]
    CountOverflow,

    #[error("matrix is not positive definite{}", smallest_eigenvalue.map(|v| format!(" (smallest eigenvalue {v:e})")).unwrap_or_default())]
    NotPositiveDefinite { smallest_eigenvalue: Option<f64> },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid interval in dimension {dim}: lower {lower} must be < upper {upper}")]
    InvalidInterval { dim: usize, lower: f64, upper: f64 },

    #[error("invalid {name}: {value} (expected {expected})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("uncertainty model is correlated; the independent fast path needs diagonal covariance or identity rank correlation")]
    CorrelatedUncertainty,

    #[error(
        "box budget exceeded: {count} boxes to evaluate (product of |tau_i|+1 over the enumerated ranges) > budget {budget}"
    )]
    BoxBudgetExceeded { count: u128, budget: u64 },

    #[error("integration failed for box {index:?}: {source}")]
    Integration {
        index: Vec<usize>,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
