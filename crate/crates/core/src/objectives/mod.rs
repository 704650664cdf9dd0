//! Training losses and image fidelity metrics.

mod losses;
mod metrics;

pub use losses::{au_loss, diffusion_loss, rec_loss, total_loss, un_loss, LossWeights, RecNorm};
pub use metrics::{
    mse, psnr, psnr_from_mse, ssim, PSNR_CAP_DB, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
