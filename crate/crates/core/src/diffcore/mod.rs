//! Reverse-mode building blocks for the fixed feed-forward networks used by
//! the models: dense layers, ReLU/softmax, cross-entropy, Euclidean distance,
//! population variance and Adam.

mod adam;
mod mlp;
mod ops;

pub use adam::{AdamConfig, AdamState, Param};
pub use mlp::{Activation, DenseLayer, Mlp, MlpGrads, Tape};
pub use ops::{distance, euclidean_distance, softmax_cross_entropy, variance};
