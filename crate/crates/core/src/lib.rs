pub mod codec;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Gradients, Graph, Tensor, Var};
