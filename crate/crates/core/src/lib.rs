pub mod autodiff;
pub mod autoencoder;
pub mod error;
pub mod gan;
pub mod io;
pub mod nn;
pub mod ot;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
