pub mod autodiff;
pub mod data;
pub mod error;
pub mod importance;
pub mod init;
pub mod model;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod search;

pub use error::{Error, Result};
