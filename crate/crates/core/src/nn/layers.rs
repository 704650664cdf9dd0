use ndarray::Array4;

use super::graph::{Element, Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform with variance `1/fan_in`.
    Lecun,
    Zero,
}

/// Convolution with bias. Weights live in a [`ParamStore`] under
/// `{name}.w` / `{name}.b`.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: String,
    bias: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        init: Init,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(Error::param(format!("conv {name} with a zero dimension")));
        }
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = (3.0 / fan_in).sqrt();
        let shape = (out_channels, in_channels, kernel, kernel);
        let w = match init {
            Init::Lecun => Array4::from_shape_simple_fn(shape, || T::lit(rng.random_range(-bound..bound))),
            Init::Zero => Array4::zeros(shape),
        };
        let weight = format!("{name}.w");
        let bias = format!("{name}.b");
        store.insert(&weight, w)?;
        store.insert(&bias, Array4::zeros((1, out_channels, 1, 1)))?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride: 1,
        })
    }

    /// Padding keeps the spatial size for odd kernels.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = store.bind(g, &self.weight)?;
        let b = store.bind(g, &self.bias)?;
        let y = g.conv2d(x, w, self.stride, self.kernel / 2)?;
        g.add(y, b)
    }
}

/// Sinusoidal embedding with interleaved `sin`/`cos` pairs at frequencies
/// `10000^(−k/(dim/2))`.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::param(format!("time embedding dim {dim} must be even and positive")));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out.push(a.sin());
        out.push(a.cos());
    }
    Ok(out)
}

/// Embeddings of a batch of timesteps as an `N × dim × 1 × 1` array.
pub fn time_embedding_batch<T: Element>(ts: &[usize], dim: usize) -> Result<Array4<T>> {
    let mut out = Array4::zeros((ts.len(), dim, 1, 1));
    for (i, &t) in ts.iter().enumerate() {
        for (k, v) in time_embedding(t, dim)?.into_iter().enumerate() {
            out[[i, k, 0, 0]] = T::lit(v);
        }
    }
    Ok(out)
}
