//! Watermark denoising with a conditional U-Net GAN and one-shot watermark
//! classification with a Siamese network.

pub mod artifacts;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod gan_models;
pub mod gan_training;
pub mod image;
pub mod nn;
pub mod quality_metrics;
pub mod report;
pub mod siamese;

pub use error::{Error, Result};
