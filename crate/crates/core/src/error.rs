use alloc::string::String;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerics: {0}")]
    Numerics(String),
    #[error("training failed at epoch {epoch}: {message}")]
    Train { epoch: usize, message: String },
    #[error("negative sampling: {0}")]
    Sampling(String),
    #[error("metric: {0}")]
    Metric(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
