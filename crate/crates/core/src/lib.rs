pub mod analysis;
pub mod dataset;
pub mod error;
pub mod io;
pub mod nn;
pub mod recon;
pub mod seeds;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
