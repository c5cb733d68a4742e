pub mod cli;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod model;
pub mod gmsfem;
pub mod hier;
pub mod homogenize;
pub mod time_picard;

pub use error::{Error, Result};
