//! Scene flow estimation as a conditional denoising diffusion process over
//! per-point flow vectors, with a two-stage transformer denoiser, training
//! and sampling loops, standard metrics and multi-hypothesis uncertainty.

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod objective;
pub mod pointcloud;
pub mod uncertainty;

pub use error::{Error, Result};
