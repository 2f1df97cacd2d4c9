pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod cli;

pub use error::{Error, Result};
