use thiserror::Error;

/// Domain errors raised by the cost and electrolyzer models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("operating point {op}% outside feasible range [{lo}, {hi}] for state {state}")]
    InfeasibleOperatingPoint {
        op: f64,
        lo: f64,
        hi: f64,
        state: &'static str,
    },
}

impl ModelError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ModelError::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
