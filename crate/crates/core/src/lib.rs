//! Hybrid VAE-diffusion synthesizer for zero-inflated tabular count data.

pub mod augmentation;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod explain;
pub mod matrix;
pub mod nn;
pub mod predictors;
pub mod quality;
pub mod tokenizer;
pub mod vae;

pub use error::{Error, Result};
