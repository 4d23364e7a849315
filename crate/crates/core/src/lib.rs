//! Hyperspherical latent toolkit: directional distributions, constant-norm
//! projection, ELBO bound analysis, a toy spherical VAE and a
//! rectified-flow autoregressive decoder.

pub mod ar;
pub mod bounds;
pub mod directional;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod quad;
pub mod rng;
pub mod special;
pub mod stats;
pub mod svae;
pub mod tensor;

pub use error::{Error, Result};
