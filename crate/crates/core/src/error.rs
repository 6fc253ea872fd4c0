use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: result would have {requested} elements, limit is {limit}")]
    TooLarge {
        op: &'static str,
        requested: u128,
        limit: usize,
    },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("target sparsity {target} is below current sparsity {current}; masks never regrow")]
    SparsityDecrease { current: f64, target: f64 },

    #[error("structured term has {structured} parameters but the budget is {budget:.1}")]
    BudgetExceeded { structured: usize, budget: f64 },

    #[error("{what}: {dim} is not divisible by {factor}")]
    NotDivisible {
        what: &'static str,
        dim: usize,
        factor: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
