use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration value (or combination of values) is not usable.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Training or inference produced non-finite values.
    #[error("numerical error: {0}")]
    NonFinite(String),

    /// A requested run would exceed the memory budget.
    #[error("resource limit: {0}")]
    ResourceLimit(String),

    /// Dataset or checkpoint contents are malformed.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
