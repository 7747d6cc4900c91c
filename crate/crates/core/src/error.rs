use thiserror::Error;

/// Every fallible operation in the kit reports one of these.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttnError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: String, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("routing error: {0}")]
    Routing(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("unsupported TP degree {degree}: {reason}")]
    UnsupportedTp { degree: usize, reason: String },
}

impl AttnError {
    pub fn dim(op: impl Into<String>, left: &[usize], right: &[usize]) -> Self {
        AttnError::Dimension {
            op: op.into(),
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        AttnError::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, AttnError>;
