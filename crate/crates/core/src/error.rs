use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by tensor operations, models, losses and the optimizer.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("backward called on a loss that is not attached to any differentiable input")]
    EmptyTape,
    #[error("non-finite value in `{term}`")]
    NonFinite { term: String },
    #[error("optimizer error: parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeData { shape: Vec<usize>, len: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(alloc::format!($($arg)*)) };
}

macro_rules! arg_err {
    ($($arg:tt)*) => { $crate::error::Error::Argument(alloc::format!($($arg)*)) };
}

pub(crate) use arg_err;
pub(crate) use dim_err;
