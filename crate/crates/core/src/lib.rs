pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod network;
pub mod training;

pub use error::{Error, Result};
