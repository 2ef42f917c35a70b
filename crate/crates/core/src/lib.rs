//! Single-image novel view synthesis with a jointly trained encoder and
//! radiance-field GAN.
//!
//! The generator maps a latent code and a camera pose to an image by volume
//! rendering a FiLM-conditioned sine network. A discriminator judges realness
//! and regresses pose, and an encoder inverts images back to (code, pose).
//! [`training`] combines five objectives under an alternating schedule with
//! an encoder warm-up; [`inference`] exposes novel views, sampling,
//! interpolation and latent refinement; [`metrics`] implements PSNR, FID, KID
//! and IS against a pluggable feature extractor.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod generator;
pub mod geometry;
pub mod image_tensor;
pub mod inference;
pub mod metrics;
pub mod networks;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod render;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
