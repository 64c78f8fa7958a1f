pub mod alignment;
pub mod corpus;
pub mod error;
pub mod incremental;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod recognizer;
pub mod synthesizer;
pub mod trainer;

pub use error::{Error, Result};
