pub mod cli;
pub mod criteria;
pub mod datagen;
pub mod decomp;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod smoothers;

pub use error::{Error, Result};
