//! Joint-conditional diffusion restoration of images under mixed weather
//! degradations.
//!
//! The crate is organised along the pipeline:
//!
//! * [`degradation`] synthesizes haze, rain streaks, snow and raindrops with
//!   ground-truth masks.
//! * [`diffusion`] holds noise schedules, the forward process and the implicit
//!   (DDIM) restoration sampler, generic over any [`diffusion::Denoiser`].
//! * [`nn`] is a small reverse-mode autodiff engine with the conditional
//!   denoiser, the uncertainty estimation block and the refinement network.
//! * [`objectives`] provides training losses and PSNR/SSIM.
//! * [`harness`] orchestrates datasets, training, restoration and evaluation.

pub mod degradation;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod nn;
pub mod objectives;
pub mod raster;
pub mod seed;

pub use error::{Error, Result};
pub use raster::{DegMask, DepthMap, ImageF, TransmissionMap};
