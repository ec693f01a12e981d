//! Translational concept embeddings for generalized compositional zero-shot
//! learning: models, losses, synthetic data, evaluation and training.

pub mod config;
pub mod dataforge;
pub mod diffcore;
pub mod embedspace;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Result, TceError};
