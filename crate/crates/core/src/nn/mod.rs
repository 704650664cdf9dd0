//! A small CPU tensor engine with reverse-mode differentiation, and the two
//! networks built on it: the conditional noise predictor and the
//! uncertainty-guided refiner.

mod checkpoint;
mod denoiser;
mod graph;
mod layers;
mod params;
mod refiner;
mod ueb;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use denoiser::{ConditionalUNet, DenoiserConfig};
pub use graph::{Element, Gradients, Graph, Var};
pub use layers::{time_embedding, time_embedding_batch, Conv, Init};
pub use params::{AdamConfig, ParamStore};
pub use refiner::{Refiner, RefinerConfig, RefinerOutput, RefinerVars};
pub use ueb::{modulate, Ueb, UebConfig, UebMasks, UebVars, UncertaintyMaps};

use ndarray::{Array3, Array4, Axis};

use crate::diffusion::Condition;
use crate::error::{Error, Result};
use crate::raster::ImageF;

/// Stacks `C × H × W` states into an `N × C × H × W` batch.
pub fn stack_states<T: Element>(states: &[&Array3<f32>]) -> Result<Array4<T>> {
    let first = states.first().ok_or_else(|| Error::shape("empty batch"))?;
    let (c, h, w) = first.dim();
    if let Some(bad) = states.iter().find(|s| s.dim() != (c, h, w)) {
        return Err(Error::shape(format!("batch mixes {:?} and {:?}", (c, h, w), bad.dim())));
    }
    Ok(Array4::from_shape_fn((states.len(), c, h, w), |(n, k, y, x)| T::lit(states[n][[k, y, x]] as f64)))
}

/// Images as an `N × C × H × W` batch. All images must share dimensions.
pub fn image_batch<T: Element>(images: &[&ImageF]) -> Array4<T> {
    let (h, w, c) = images[0].dims();
    Array4::from_shape_fn((images.len(), c, h, w), |(n, k, y, x)| T::lit(images[n].get(y, x, k) as f64))
}

/// Degraded image channels followed by the mask, `N × (C+1) × H × W`.
pub fn condition_batch<T: Element>(conds: &[&Condition]) -> Result<Array4<T>> {
    let first = conds.first().ok_or_else(|| Error::shape("empty batch"))?;
    let (h, w, c) = first.degraded.dims();
    if let Some(bad) = conds.iter().find(|k| k.degraded.dims() != (h, w, c)) {
        return Err(Error::shape(format!("batch mixes {:?} and {:?}", (h, w, c), bad.degraded.dims())));
    }
    Ok(Array4::from_shape_fn((conds.len(), c + 1, h, w), |(n, k, y, x)| {
        let v = if k < c {
            conds[n].degraded.get(y, x, k)
        } else {
            conds[n].mask.get(y, x)
        };
        T::lit(v as f64)
    }))
}

pub fn unstack<T: Element>(batch: &Array4<T>) -> Vec<Array3<f32>> {
    batch
        .axis_iter(Axis(0))
        .map(|a| a.mapv(|v| v.to_f32().unwrap_or(f32::NAN)))
        .collect()
}

/// Replaces `target`'s values by `source`'s after checking names and shapes agree.
pub(crate) fn adopt_params<T: Element>(target: &mut ParamStore<T>, source: ParamStore<T>) -> Result<()> {
    let want: Vec<_> = target.names().map(str::to_string).collect();
    let have: Vec<_> = source.names().map(str::to_string).collect();
    if want.len() != have.len() || want.iter().any(|n| !have.contains(n)) {
        return Err(Error::state(format!(
            "checkpoint holds {} tensors that do not match the {} expected by the config",
            have.len(),
            want.len()
        )));
    }
    for name in &want {
        let src = source.value(name)?;
        let dst = target.value_mut(name)?;
        if src.dim() != dst.dim() {
            return Err(Error::state(format!("{name}: checkpoint shape {:?}, config shape {:?}", src.dim(), dst.dim())));
        }
        dst.assign(src);
    }
    Ok(())
}
