use thiserror::Error;

#[derive(Debug, Error)]
pub enum MespError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("index {index} out of range for order {order}")]
    IndexOutOfRange { index: usize, order: usize },

    #[error("enumeration cap exceeded: {subsets} subsets > cap {cap}")]
    CapExceeded { subsets: u128, cap: u128 },

    #[error("matrix is not tridiagonal under the given ordering")]
    NotTridiagonal,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
