pub mod cli;
pub mod dataio;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod kernels;
pub mod netspec;
pub mod network;
pub mod pairgen;
pub mod param;
pub mod pipeline;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
