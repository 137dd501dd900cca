pub mod cli;
pub mod dataprep;
pub mod error;
pub mod eval;
pub mod export;
pub mod field;
pub mod geom;
pub mod rendering;
pub mod sampling;
pub mod synthscene;
pub mod training;

pub use error::{Error, Result};
