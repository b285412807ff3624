//! Crate-wide error type.

/// Errors raised by constructors and domain-validated operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A box with non-positive or non-finite extent was rejected.
    #[error("invalid box: expected finite coordinates and w > 0, h > 0, got (x={x}, y={y}, w={w}, h={h})")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },

    /// A scalar parameter fell outside its documented domain.
    #[error("{name} must satisfy {constraint}, got {value}")]
    OutOfDomain {
        name: &'static str,
        constraint: &'static str,
        value: f64,
    },

    /// Tensor or matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A function evaluated to a non-finite value during finite differencing.
    #[error("non-finite evaluation at coordinate {coord} (f = {value})")]
    NonFiniteEval { coord: usize, value: f64 },

    /// A synthetic-scene spec cannot produce boxes that fit the image.
    #[error("scene spec infeasible: {0}")]
    InfeasibleScene(String),

    /// COCO-format input failed structural validation after parsing.
    #[error("invalid record: {0}")]
    InvalidRecord(String),

    /// COCO-format JSON could not be parsed.
    #[error("parse error in {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn out_of_domain(name: &'static str, constraint: &'static str, value: f64) -> Self {
        Error::OutOfDomain {
            name,
            constraint,
            value,
        }
    }
}
