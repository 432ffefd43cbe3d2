//! Language-aware multilingual text-to-speech at desk scale: tokenization,
//! a FastSpeech-style acoustic model with a style adapter, mel and latent
//! feature backends, and the training pipeline.

pub mod autograd;
pub mod error;
pub mod features;
pub mod model;
pub mod optim;
pub mod params;
pub mod synth;
pub mod text;
pub mod training;

pub use error::{Error, Result};
