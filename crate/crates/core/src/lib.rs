//! Learning discrete code-efficiency edits: canonical corpora, pair mining,
//! the Edit-VQVAE with its baselines and ablations, training and evaluation.

pub mod corpus;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod pairing;
pub mod training;

pub use error::{Error, Result};
