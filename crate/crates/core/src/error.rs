use thiserror::Error;

/// Errors produced by the model, the simulator and the configuration layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape error on {axis}: expected {expected}, got {actual}")]
    Shape {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("{budget} exceeded: need {required} bytes, capacity {capacity} bytes")]
    Budget {
        budget: &'static str,
        required: u64,
        capacity: u64,
    },

    #[error("hardware configuration: {0}")]
    Config(String),

    #[error("64-bit overflow while computing {0}")]
    Overflow(&'static str),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(axis: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            axis,
            expected,
            actual,
        }
    }
}

pub(crate) fn ensure_dim(axis: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::shape(axis, expected, actual))
    }
}
