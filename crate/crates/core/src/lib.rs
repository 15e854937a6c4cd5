//! Domain adaptation by searching the latent space of a source-trained
//! generative model for source-like clones of target images.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod edge;
pub mod error;
pub mod latent_search;
pub mod metrics;
pub mod nn;
pub mod perceptual;
pub mod pipeline;
pub mod ssim;
pub mod vae;

pub use error::{Error, Result};
