pub mod annotator;
pub mod attributes;
pub mod cli;
pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod guidance;
pub mod identity_pool;
pub mod image;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
