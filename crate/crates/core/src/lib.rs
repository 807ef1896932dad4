//! Fusing partially labeled travel surveys to estimate household delivery
//! counts.
//!
//! The pipeline harmonizes each survey's covariates into a shared one-hot
//! dictionary ([`schema`], [`ingest`]), imputes missing targets by Hamming
//! nearest-neighbor matching against a labeled donor pool ([`matching`]),
//! transfers labels across survey years through a tri-partite matching graph
//! ([`synthesis`]), scores results against ground truth ([`evaluation`]) and
//! explains a fitted predictor with exact Shapley values ([`attribution`]).
//! [`datagen`] produces seeded synthetic surveys with a planted structure.

pub mod attribution;
pub mod bits;
pub mod cli;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod matching;
pub mod schema;
pub mod synthesis;

pub use bits::{hamming, BitVector};
pub use dataset::{EncodedDataset, EncodedSample};
pub use error::{Error, Result};
pub use schema::{FeatureDictionary, HarmonizationSpec};
