//! Hierarchy-guided contrastive learning for implicit discourse relation
//! recognition.

pub mod augment;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod hierarchy;
pub mod losses;
pub mod pairing;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
