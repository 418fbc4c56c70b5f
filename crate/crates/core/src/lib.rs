pub mod cnn;
pub mod container;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod features;
pub mod fusion;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
