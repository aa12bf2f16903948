use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("rows have unequal lengths")]
    RaggedRows,

    #[error("shapes {a:?} and {b:?} are not broadcast-compatible for {op}")]
    Broadcast {
        op: &'static str,
        a: Vec<usize>,
        b: Vec<usize>,
    },

    #[error("matmul dimension mismatch: {a:?} x {b:?}")]
    MatMul { a: Vec<usize>, b: Vec<usize> },

    #[error("{op} shape mismatch: {a:?} vs {b:?}")]
    Shape {
        op: &'static str,
        a: Vec<usize>,
        b: Vec<usize>,
    },

    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },

    #[error("{0}")]
    Invalid(String),
}
