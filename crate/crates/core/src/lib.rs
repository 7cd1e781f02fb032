pub mod data;
pub mod error;
pub mod flow;
pub mod model;
pub mod motion;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
