use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("non-finite {quantity} at layer {layer}")]
    Numerical { layer: usize, quantity: &'static str },

    #[error("degenerate spectrum: Hessian-vector product vanished twice during power iteration")]
    DegenerateSpectrum,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: regularized objective is not finite")]
    Divergence { step: usize },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("degenerate regression: shift magnitudes have zero variance")]
    DegenerateRegression,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            context,
            expected,
            got,
        }
    }
}
