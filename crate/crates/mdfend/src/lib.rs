//! Multi-domain fake news detection: a mixture of convolutional expert
//! encoders aggregated by a domain-conditioned gate, with a full
//! training/evaluation pipeline and synthetic-corpus harness.

pub mod corpus;
pub mod error;
pub mod mat;
pub mod metrics;
pub mod network;
pub mod textpipe;
pub mod training;

pub use error::{Error, Result};
