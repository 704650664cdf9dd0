use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::graph::{Element, Graph, Var};
use super::layers::{Conv, Init};
use super::params::ParamStore;
use super::ueb::{Ueb, UebConfig, UebMasks, UebVars, UncertaintyMaps};
use super::{image_batch, unstack};
use crate::diffusion::state_to_image;
use crate::error::{Error, Result};
use crate::raster::ImageF;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    pub image_channels: usize,
    pub base_channels: usize,
    /// Number of scales; one uncertainty block per scale.
    pub depth: usize,
    pub ueb: UebConfig,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            base_channels: 16,
            depth: 2,
            ueb: UebConfig::default(),
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_channels == 0 || self.base_channels == 0 || self.depth == 0 {
            return Err(Error::param(format!("invalid refiner config {self:?}")));
        }
        self.ueb.validate()
    }

    fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone)]
pub struct RefinerVars {
    /// `clamp(J_coarse + residual, 0, 1)`.
    pub refined: Var,
    pub scales: Vec<UebVars>,
}

/// Refined image plus the uncertainty maps of every scale, for one item.
#[derive(Debug, Clone)]
pub struct RefinerOutput {
    pub refined: ImageF,
    pub scales: Vec<UncertaintyMaps>,
}

/// U-shaped residual refiner with uncertainty-guided feature modulation.
#[derive(Debug, Clone)]
pub struct Refiner<T> {
    cfg: RefinerConfig,
    pub params: ParamStore<T>,
    conv_in: Conv,
    blocks: Vec<(Conv, Conv)>,
    uebs: Vec<Ueb>,
    downs: Vec<Conv>,
    ups: Vec<Conv>,
    conv_out: Conv,
}

impl<T: Element> Refiner<T> {
    pub fn new(cfg: RefinerConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        cfg.validate()?;
        let mut p = ParamStore::new();
        let ic = cfg.image_channels;
        let conv_in = Conv::new(&mut p, "conv_in", ic, cfg.level_channels(0), 3, Init::Lecun, rng)?;
        let mut blocks = Vec::new();
        let mut uebs = Vec::new();
        let mut downs = Vec::new();
        let mut ups = Vec::new();
        for l in 0..cfg.depth {
            let c = cfg.level_channels(l);
            blocks.push((
                Conv::new(&mut p, &format!("block{l}.conv1"), c, c, 3, Init::Lecun, rng)?,
                Conv::new(&mut p, &format!("block{l}.conv2"), c, c, 3, Init::Lecun, rng)?,
            ));
            uebs.push(Ueb::new(&mut p, &format!("ueb{l}"), c, ic, cfg.ueb, rng)?);
            if l + 1 < cfg.depth {
                let next = cfg.level_channels(l + 1);
                downs.push(Conv::new(&mut p, &format!("down{l}"), c, next, 3, Init::Lecun, rng)?);
                ups.push(Conv::new(&mut p, &format!("up{l}"), next + c, c, 3, Init::Lecun, rng)?);
            }
        }
        let conv_out = Conv::new(&mut p, "conv_out", cfg.level_channels(0), ic, 3, Init::Zero, rng)?;
        Ok(Self {
            cfg,
            params: p,
            conv_in,
            blocks,
            uebs,
            downs,
            ups,
            conv_out,
        })
    }

    pub fn from_params(cfg: RefinerConfig, params: ParamStore<T>) -> Result<Self> {
        let mut net = Self::new(cfg, &mut crate::seed::rng_from_seed(0))?;
        super::adopt_params(&mut net.params, params)?;
        Ok(net)
    }

    pub fn config(&self) -> &RefinerConfig {
        &self.cfg
    }

    /// Channel-drop subsets for every scale, in scale order.
    pub fn draw_masks(&self, rng: &mut impl rand::Rng) -> Vec<UebMasks> {
        self.uebs.iter().map(|u| u.draw_masks(rng)).collect()
    }

    /// `coarse`: `N × C × H × W` coarse restoration.
    pub fn forward(&self, g: &mut Graph<T>, coarse: Var, masks: &[UebMasks]) -> Result<RefinerVars> {
        let [_, c, h, w] = g.shape(coarse);
        if c != self.cfg.image_channels {
            return Err(Error::shape(format!("refiner expects {} channels, got {c}", self.cfg.image_channels)));
        }
        let f = 1 << (self.cfg.depth - 1);
        if h % f != 0 || w % f != 0 {
            return Err(Error::shape(format!("spatial {h}x{w} not divisible by {f}")));
        }
        if masks.len() != self.cfg.depth {
            return Err(Error::shape(format!("{} mask sets for {} scales", masks.len(), self.cfg.depth)));
        }
        let p = &self.params;
        let mut feat = self.conv_in.forward(g, p, coarse)?;
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut scales = Vec::with_capacity(self.cfg.depth);
        for l in 0..self.cfg.depth {
            let (c1, c2) = &self.blocks[l];
            let a = g.silu(feat);
            let hb = c1.forward(g, p, a)?;
            let hb = g.silu(hb);
            let hb = c2.forward(g, p, hb)?;
            let f_out = g.add(feat, hb)?;
            let ueb = self.uebs[l].forward(g, p, feat, &masks[l])?;
            let f_mod = g.blend(feat, f_out, ueb.u)?;
            scales.push(ueb);
            skips.push(f_mod);
            if l + 1 < self.cfg.depth {
                let pooled = g.avg_pool2(f_mod)?;
                feat = self.downs[l].forward(g, p, pooled)?;
            }
        }
        let mut hcur = skips.pop().expect("depth >= 1");
        for l in (0..self.cfg.depth - 1).rev() {
            let u = g.upsample2(hcur);
            let cat = g.concat_channels(&[u, skips[l]])?;
            let a = g.silu(cat);
            hcur = self.ups[l].forward(g, p, a)?;
        }
        let a = g.silu(hcur);
        let residual = self.conv_out.forward(g, p, a)?;
        let sum = g.add(coarse, residual)?;
        let refined = g.clamp(sum, T::zero(), T::one());
        Ok(RefinerVars { refined, scales })
    }
}

impl Refiner<f32> {
    /// Inference on one image, drawing channel-drop subsets from `rng`.
    pub fn refine(&self, coarse: &ImageF, rng: &mut impl rand::Rng) -> Result<RefinerOutput> {
        let masks = self.draw_masks(rng);
        let mut g = Graph::new().with_nan_guard(false);
        let x = g.constant(image_batch(&[coarse]));
        let vars = self.forward(&mut g, x, &masks)?;
        let out: Array4<f32> = g.value(vars.refined).clone();
        let refined = state_to_image(&unstack(&out)[0])?;
        let scales = vars.scales.iter().map(|s| UncertaintyMaps::extract(&g, s, 0)).collect();
        Ok(RefinerOutput { refined, scales })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn tiny() -> RefinerConfig {
        RefinerConfig {
            image_channels: 3,
            base_channels: 5,
            depth: 2,
            ueb: UebConfig::default(),
        }
    }

    #[test]
    fn fresh_refiner_is_identity_on_valid_images() {
        let r = Refiner::<f32>::new(tiny(), &mut rng_from_seed(0)).unwrap();
        let img = ImageF::from_fn(8, 6, 3, |y, x, c| ((y + 2 * x + c) % 9) as f32 / 8.0).unwrap();
        let out = r.refine(&img, &mut rng_from_seed(1)).unwrap();
        assert_eq!(out.refined, img);
        assert_eq!(out.scales.len(), 2);
        assert_eq!(out.scales[0].u.dim(), (8, 6));
        assert_eq!(out.scales[1].u.dim(), (4, 3));
        assert_eq!(out.scales[1].j_a.dim(), (3, 4, 3));
    }

    #[test]
    fn output_stays_in_unit_range() {
        let mut r = Refiner::<f32>::new(tiny(), &mut rng_from_seed(0)).unwrap();
        let w = r.params.value_mut("conv_out.w").unwrap();
        w.iter_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { 3.0 } else { -3.0 });
        let img = ImageF::from_fn(4, 4, 3, |y, x, _| ((y * 4 + x) % 2) as f32).unwrap();
        let out = r.refine(&img, &mut rng_from_seed(2)).unwrap();
        assert!(out.refined.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(r.refine(&ImageF::filled(5, 4, 3, 0.5).unwrap(), &mut rng_from_seed(2)).is_err());
    }
}
