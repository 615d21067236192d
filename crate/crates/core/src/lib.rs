//! Cross-modal retrieval with correlation-aligned branch networks.
//!
//! Images and texts that share only event labels (no pairing) are mapped by
//! two small fully-connected networks into a common label-probability
//! space. Both networks are trained together with cross-entropy plus a
//! CORAL term that pulls the covariances of their hidden and output
//! activations together. Retrieval ranks one modality against the other
//! with KL, Euclidean, cosine or normalized-correlation distance and is
//! scored by mean average precision.
//!
//! Modules, bottom-up:
//!
//! - [`numerics`]: dense matrices, covariance, seeded RNG
//! - [`alignment`]: CORAL, MMD and triplet terms with gradients
//! - [`network`]: branch networks with manual backward passes
//! - [`trainer`]: joint objective, momentum SGD, training loop
//! - [`features`]: tokenizer, TF-IDF, feature files
//! - [`dataset`]: manifests, stratified splits, new-event holdout
//! - [`datagen`]: synthetic unpaired data
//! - [`retrieval`]: distances, ranking, AP/MAP
//! - [`pipeline`] and [`cli`]: end-to-end runs and the command surface
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod alignment;
pub mod cli;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod features;
pub mod network;
pub mod numerics;
pub mod pipeline;
pub mod retrieval;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::Matrix;
