pub mod batching;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod rng;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;
