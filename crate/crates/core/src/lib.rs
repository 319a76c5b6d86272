//! Training and evaluation toolkit for attributing machine-generated
//! text to its source model.
//!
//! The pipeline treats each prompting style as a domain: a model is
//! trained on one or more source domains with a combined cross-entropy +
//! supervised-contrastive objective and evaluated on held-out target
//! domains, reporting accuracy, the absolute accuracy difference against
//! a baseline, and the relative improvement percentage.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod loss;
pub mod mat;
pub mod model;
pub mod optimizer;
pub mod probe;
pub mod projection;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
