//! Noise schedules, the forward process and conditional implicit sampling.
//!
//! Diffusion states are `C × H × W` arrays of `f32`; they are unbounded and only
//! the final restored image is clamped back to `[0, 1]`.

mod forward;
mod oracle;
mod sampler;
mod schedule;

pub use forward::{
    forward_chain_step, forward_marginal_sample, make_training_example, standard_normal_field,
    TrainingExample,
};
pub use oracle::{analytic_gaussian_denoiser, GaussianOracle};
pub use sampler::{
    ancestral_step, ancestral_step_with_noise, ddim_step, restore, restore_batch, restore_traced,
    sample_ancestral, sample_ddim, sample_ddim_from, timestep_subsequence, write_trace_csv,
    Denoiser, TraceRow,
};
pub use schedule::NoiseSchedule;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::raster::{DegMask, ImageF};

/// The conditioning pair: degraded observation and degradation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub degraded: ImageF,
    pub mask: DegMask,
}

impl Condition {
    pub fn new(degraded: ImageF, mask: DegMask) -> Result<Self> {
        if !degraded.same_spatial(mask.height(), mask.width()) {
            return Err(Error::shape(format!(
                "condition image {}x{} vs mask {}x{}",
                degraded.height(),
                degraded.width(),
                mask.height(),
                mask.width()
            )));
        }
        Ok(Self { degraded, mask })
    }

    /// `(C, H, W)` of the state this condition constrains.
    pub fn state_dim(&self) -> (usize, usize, usize) {
        let (h, w, c) = self.degraded.dims();
        (c, h, w)
    }
}

/// `H × W × C` image to a `C × H × W` state.
pub fn image_to_state(img: &ImageF) -> Array3<f32> {
    let (h, w, c) = img.dims();
    Array3::from_shape_fn((c, h, w), |(k, y, x)| img.get(y, x, k))
}

/// `C × H × W` state to an image, clamping into `[0, 1]`.
pub fn state_to_image(state: &Array3<f32>) -> Result<ImageF> {
    let (c, h, w) = state.dim();
    ImageF::from_fn(h, w, c, |y, x, k| state[[k, y, x]])
}

pub(crate) fn check_same_shape(a: &Array3<f32>, b: &Array3<f32>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}
