pub mod augment;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod explain;
pub mod loss;
pub mod network;
pub mod optim;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
