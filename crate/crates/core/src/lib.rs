pub mod analysis;
pub mod error;
pub mod model;
pub mod modmath;
pub mod nncore;
pub mod taskgen;
pub mod trainer;

pub use error::{Error, Result};
