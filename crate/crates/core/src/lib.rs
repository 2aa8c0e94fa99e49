pub mod cli;
pub mod data;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
