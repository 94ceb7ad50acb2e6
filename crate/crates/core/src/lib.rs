//! Pairwise-coupled multi-class classification of biosignal segments.
//!
//! The crate is organised along the processing pipeline:
//!
//! - [`features`]: segmentation, periodogram band powers, the 72-feature
//!   layout and background-activity (BBA) correction.
//! - [`datagen`]: synthetic multi-class two-channel corpora with known gain
//!   drift, and record-level train/test splitting.
//! - [`model`]: the pairwise network, its coupling matrix and forward pass.
//! - [`trainer`]: pocket perceptron fitting with greedy forward feature
//!   selection, one unit per class pair.
//! - [`eval`]: segment and record scoring plus the one-vs-all and
//!   hierarchical-split baselines.

pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use features::{FeatureLayout, FeatureVector, Segment};
pub use model::{GroupScores, MultiClassModel, PairwiseClassifier};
pub use trainer::TrainConfig;
