//! Paraphrase generation by unsupervised translation between corpus clusters.

pub mod clustering;
pub mod corpus;
pub mod error;
pub mod fixtures;
pub mod metrics;
pub mod nn;
pub mod pairing;
pub mod pipeline;
pub mod pseudo;
pub mod surrogate;
pub mod umt;
pub mod util;

pub use error::{Error, Result};
