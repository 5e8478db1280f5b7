//! Lesion-ROI pipeline: phantom data, classic augmentation, the classifier
//! and GAN model families, their training loops, and the evaluation harness.

pub mod error;
pub mod imageops;
pub mod models;
pub mod dataset;
pub mod evaluation;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
