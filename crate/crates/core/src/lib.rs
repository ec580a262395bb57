pub mod canny;
pub mod cli;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod image;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Real, Tensor};
