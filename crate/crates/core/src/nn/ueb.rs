use ndarray::{Array2, Array3, Array4, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::graph::{Element, Graph, Var};
use super::layers::{Conv, Init};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UebConfig {
    /// Number of stochastic passes `S_T`.
    pub samples: usize,
    /// Fraction `q` of feature channels zeroed per pass.
    pub drop_fraction: f64,
}

impl Default for UebConfig {
    fn default() -> Self {
        Self {
            samples: 8,
            drop_fraction: 0.2,
        }
    }
}

impl UebConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::param("uncertainty block needs at least one pass"));
        }
        if !(0.0..1.0).contains(&self.drop_fraction) {
            return Err(Error::param(format!("drop fraction {} outside [0, 1)", self.drop_fraction)));
        }
        Ok(())
    }

    pub fn dropped_per_pass(&self, channels: usize) -> usize {
        (self.drop_fraction * channels as f64).floor() as usize
    }
}

/// Channel subsets zeroed in each pass, drawn up front so a forward pass can be
/// replayed exactly. No rescaling is applied to the kept channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UebMasks {
    dropped: Vec<Vec<usize>>,
}

impl UebMasks {
    pub fn draw(cfg: &UebConfig, channels: usize, rng: &mut impl rand::Rng) -> Self {
        let k = cfg.dropped_per_pass(channels);
        let dropped = (0..cfg.samples)
            .map(|_| {
                let mut v = rand::seq::index::sample(rng, channels, k).into_vec();
                v.sort_unstable();
                v
            })
            .collect();
        Self { dropped }
    }

    pub fn from_subsets(dropped: Vec<Vec<usize>>) -> Self {
        Self { dropped }
    }

    pub fn passes(&self) -> usize {
        self.dropped.len()
    }

    pub fn dropped(&self, pass: usize) -> &[usize] {
        &self.dropped[pass]
    }
}

/// Graph handles for one block's outputs.
#[derive(Debug, Clone, Copy)]
pub struct UebVars {
    /// `clamp(U_E + U_A, 0, 1)`, `N × 1 × H × W`.
    pub u: Var,
    pub u_a: Var,
    pub u_e: Var,
    /// Mean of the stochastic passes, `N × C_img × H × W`.
    pub j_a: Var,
}

/// Uncertainty estimation block: an aleatoric map from a sigmoid head and an
/// epistemic map from the spread of channel-dropped reconstructions.
#[derive(Debug, Clone)]
pub struct Ueb {
    cfg: UebConfig,
    channels: usize,
    entry: Conv,
    upper: Conv,
    lower: Conv,
}

impl Ueb {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        image_channels: usize,
        cfg: UebConfig,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            channels,
            entry: Conv::new(store, &format!("{name}.entry"), channels, channels, 3, Init::Lecun, rng)?,
            upper: Conv::new(store, &format!("{name}.upper"), channels, 1, 3, Init::Lecun, rng)?,
            lower: Conv::new(store, &format!("{name}.lower"), channels, image_channels, 3, Init::Lecun, rng)?,
        })
    }

    pub fn config(&self) -> &UebConfig {
        &self.cfg
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn draw_masks(&self, rng: &mut impl rand::Rng) -> UebMasks {
        UebMasks::draw(&self.cfg, self.channels, rng)
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, f: Var, masks: &UebMasks) -> Result<UebVars> {
        if masks.passes() == 0 {
            return Err(Error::param("uncertainty block called with no passes"));
        }
        if let Some(bad) = masks.dropped.iter().flatten().find(|&&c| c >= self.channels) {
            return Err(Error::shape(format!("dropped channel {bad} of {}", self.channels)));
        }
        let e = self.entry.forward(g, p, f)?;
        let e = g.silu(e);
        let up = self.upper.forward(g, p, e)?;
        let u_a = g.sigmoid(up);

        // Identical subsets give identical passes; evaluate each once and weight it.
        let mut unique: Vec<(&[usize], usize)> = Vec::new();
        for d in &masks.dropped {
            match unique.iter_mut().find(|(u, _)| *u == d.as_slice()) {
                Some((_, n)) => *n += 1,
                None => unique.push((d, 1)),
            }
        }
        let total = T::from_usize(masks.passes()).expect("count");
        let mut outs = Vec::with_capacity(unique.len());
        for (dropped, _) in &unique {
            let input = if dropped.is_empty() {
                e
            } else {
                let mut keep = Array4::from_elem((1, self.channels, 1, 1), T::one());
                for &c in *dropped {
                    keep[[0, c, 0, 0]] = T::zero();
                }
                let keep = g.constant(keep);
                g.mul(e, keep)?
            };
            let y = self.lower.forward(g, p, input)?;
            outs.push(g.tanh(y));
        }
        let weight = |n: usize| T::from_usize(n).expect("count") / total;
        let mut j_a = g.scale(outs[0], weight(unique[0].1));
        for (y, (_, n)) in outs.iter().zip(&unique).skip(1) {
            let s = g.scale(*y, weight(*n));
            j_a = g.add(j_a, s)?;
        }
        let mut var = None;
        for (y, (_, n)) in outs.iter().zip(&unique) {
            let d = g.sub(*y, j_a)?;
            let d = g.square(d);
            let d = g.scale(d, weight(*n));
            var = Some(match var {
                None => d,
                Some(acc) => g.add(acc, d)?,
            });
        }
        let u_e = g.mean_channels(var.expect("at least one pass"));
        let sum = g.add(u_e, u_a)?;
        let u = g.clamp(sum, T::zero(), T::one());
        Ok(UebVars { u, u_a, u_e, j_a })
    }
}

/// `F_in ⊙ U + F_out ⊙ (1 − U)` with `U` broadcast over channels.
pub fn modulate<T: Element>(f_in: &Array4<T>, f_out: &Array4<T>, u: &Array4<T>) -> Result<Array4<T>> {
    if f_in.dim() != f_out.dim() {
        return Err(Error::shape(format!("modulate {:?} with {:?}", f_in.dim(), f_out.dim())));
    }
    let uv = u
        .broadcast(f_in.raw_dim())
        .ok_or_else(|| Error::shape(format!("weight {:?} onto {:?}", u.dim(), f_in.dim())))?;
    Ok(Zip::from(f_in)
        .and(f_out)
        .and(&uv)
        .map_collect(|&a, &b, &w| a * w + b * (T::one() - w)))
}

/// Per-pixel maps of one item, copied out of a graph.
#[derive(Debug, Clone)]
pub struct UncertaintyMaps {
    pub u: Array2<f32>,
    pub u_a: Array2<f32>,
    pub u_e: Array2<f32>,
    /// `C × H × W`.
    pub j_a: Array3<f32>,
}

impl UncertaintyMaps {
    pub fn extract<T: Element>(g: &Graph<T>, vars: &UebVars, item: usize) -> Self {
        let plane = |v: Var| {
            g.value(v)
                .index_axis(Axis(0), item)
                .index_axis(Axis(0), 0)
                .mapv(|x| x.to_f32().unwrap_or(f32::NAN))
        };
        Self {
            u: plane(vars.u),
            u_a: plane(vars.u_a),
            u_e: plane(vars.u_e),
            j_a: g
                .value(vars.j_a)
                .index_axis(Axis(0), item)
                .mapv(|x| x.to_f32().unwrap_or(f32::NAN)),
        }
    }
}
