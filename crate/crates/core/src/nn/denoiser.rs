use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use super::graph::{Element, Graph, Var};
use super::layers::{time_embedding_batch, Conv, Init};
use super::params::ParamStore;
use super::{condition_batch, stack_states, unstack};
use crate::diffusion::{Condition, Denoiser};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub image_channels: usize,
    pub base_channels: usize,
    /// Number of downsampling levels; inputs must be divisible by `2^depth`.
    pub depth: usize,
    pub time_embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            base_channels: 32,
            depth: 2,
            time_embed_dim: 32,
        }
    }
}

impl DenoiserConfig {
    /// `J_t`, the degraded image and the mask, stacked.
    pub fn in_channels(&self) -> usize {
        2 * self.image_channels + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_channels == 0 || self.base_channels == 0 || self.depth == 0 {
            return Err(Error::param(format!("invalid denoiser config {self:?}")));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::param("time_embed_dim must be even and positive"));
        }
        Ok(())
    }

    fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv,
    time: Conv,
    conv2: Conv,
    skip: Option<Conv>,
}

impl ResBlock {
    fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        temb: usize,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv::new(store, &format!("{name}.conv1"), cin, cout, 3, Init::Lecun, rng)?,
            time: Conv::new(store, &format!("{name}.time"), temb, cout, 1, Init::Lecun, rng)?,
            conv2: Conv::new(store, &format!("{name}.conv2"), cout, cout, 3, Init::Lecun, rng)?,
            skip: if cin != cout {
                Some(Conv::new(store, &format!("{name}.skip"), cin, cout, 1, Init::Lecun, rng)?)
            } else {
                None
            },
        })
    }

    fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var, temb: Var) -> Result<Var> {
        let a = g.silu(x);
        let h = self.conv1.forward(g, p, a)?;
        let tp = self.time.forward(g, p, temb)?;
        let h = g.add(h, tp)?;
        let h = g.silu(h);
        let h = self.conv2.forward(g, p, h)?;
        let s = match &self.skip {
            Some(c) => c.forward(g, p, x)?,
            None => x,
        };
        g.add(s, h)
    }
}

/// Conditional U-Net noise predictor `ε_θ(J_t, I, m, t)`.
#[derive(Debug, Clone)]
pub struct ConditionalUNet<T> {
    cfg: DenoiserConfig,
    pub params: ParamStore<T>,
    time_mlp: Conv,
    conv_in: Conv,
    down: Vec<ResBlock>,
    mid: ResBlock,
    up: Vec<ResBlock>,
    conv_out: Conv,
}

impl<T: Element> ConditionalUNet<T> {
    pub fn new(cfg: DenoiserConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        cfg.validate()?;
        let mut p = ParamStore::new();
        let e = cfg.time_embed_dim;
        let time_mlp = Conv::new(&mut p, "time_mlp", e, e, 1, Init::Lecun, rng)?;
        let c0 = cfg.level_channels(0);
        let conv_in = Conv::new(&mut p, "conv_in", cfg.in_channels(), c0, 3, Init::Lecun, rng)?;
        let mut down = Vec::new();
        let mut prev = c0;
        for l in 0..cfg.depth {
            let c = cfg.level_channels(l);
            down.push(ResBlock::new(&mut p, &format!("down{l}"), prev, c, e, rng)?);
            prev = c;
        }
        let mid = ResBlock::new(&mut p, "mid", prev, prev, e, rng)?;
        let mut up = Vec::new();
        for l in (0..cfg.depth).rev() {
            let c = cfg.level_channels(l);
            up.push(ResBlock::new(&mut p, &format!("up{l}"), prev + c, c, e, rng)?);
            prev = c;
        }
        let conv_out = Conv::new(&mut p, "conv_out", c0, cfg.image_channels, 3, Init::Zero, rng)?;
        Ok(Self {
            cfg,
            params: p,
            time_mlp,
            conv_in,
            down,
            mid,
            up,
            conv_out,
        })
    }

    /// Rebuilds the architecture and adopts `params`, which must match it
    /// name for name and shape for shape.
    pub fn from_params(cfg: DenoiserConfig, params: ParamStore<T>) -> Result<Self> {
        let mut net = Self::new(cfg, &mut crate::seed::rng_from_seed(0))?;
        super::adopt_params(&mut net.params, params)?;
        Ok(net)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// `x_t`: `N × C × H × W`; `cond`: `N × (C+1) × H × W`; one timestep per item.
    pub fn forward(&self, g: &mut Graph<T>, x_t: Var, cond: Var, ts: &[usize]) -> Result<Var> {
        let [n, c, h, w] = g.shape(x_t);
        if c != self.cfg.image_channels {
            return Err(Error::shape(format!("denoiser expects {} channels, got {c}", self.cfg.image_channels)));
        }
        if g.shape(cond) != [n, c + 1, h, w] {
            return Err(Error::shape(format!("condition {:?} for state {:?}", g.shape(cond), g.shape(x_t))));
        }
        if ts.len() != n {
            return Err(Error::shape(format!("{} timesteps for a batch of {n}", ts.len())));
        }
        let f = 1 << self.cfg.depth;
        if h % f != 0 || w % f != 0 {
            return Err(Error::shape(format!("spatial {h}x{w} not divisible by {f}")));
        }
        let p = &self.params;
        let emb = g.constant(time_embedding_batch(ts, self.cfg.time_embed_dim)?);
        let temb = self.time_mlp.forward(g, p, emb)?;
        let temb = g.silu(temb);

        let x = g.concat_channels(&[x_t, cond])?;
        let mut hcur = self.conv_in.forward(g, p, x)?;
        let mut skips = Vec::with_capacity(self.cfg.depth);
        for block in &self.down {
            hcur = block.forward(g, p, hcur, temb)?;
            skips.push(hcur);
            hcur = g.avg_pool2(hcur)?;
        }
        hcur = self.mid.forward(g, p, hcur, temb)?;
        for block in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let u = g.upsample2(hcur);
            let cat = g.concat_channels(&[u, skip])?;
            hcur = block.forward(g, p, cat, temb)?;
        }
        let a = g.silu(hcur);
        self.conv_out.forward(g, p, a)
    }
}

impl ConditionalUNet<f32> {
    fn predict(&self, states: &[&Array3<f32>], conds: &[&Condition], t: usize) -> Result<Array4<f32>> {
        let mut g = Graph::new().with_nan_guard(false);
        let x = g.constant(stack_states(states)?);
        let c = g.constant(condition_batch(conds)?);
        let out = self.forward(&mut g, x, c, &vec![t; states.len()])?;
        Ok(g.value(out).clone())
    }
}

impl Denoiser for ConditionalUNet<f32> {
    fn predict_noise(&self, state: &Array3<f32>, condition: &Condition, t: usize) -> Result<Array3<f32>> {
        let out = self.predict(&[state], &[condition], t)?;
        Ok(unstack(&out).remove(0))
    }

    fn predict_noise_batch(
        &self,
        states: &[Array3<f32>],
        conditions: &[&Condition],
        t: usize,
    ) -> Result<Vec<Array3<f32>>> {
        if states.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<_> = states.iter().collect();
        Ok(unstack(&self.predict(&refs, conditions, t)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::image_to_state;
    use crate::raster::{DegMask, ImageF};
    use crate::seed::rng_from_seed;

    fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            image_channels: 3,
            base_channels: 4,
            depth: 2,
            time_embed_dim: 8,
        }
    }

    fn cond(seed: u64) -> Condition {
        let img = ImageF::from_fn(8, 8, 3, |y, x, c| ((y * 13 + x * 7 + c * 3 + seed as usize) % 10) as f32 / 10.0).unwrap();
        Condition::new(img, DegMask::zeros(8, 8)).unwrap()
    }

    #[test]
    fn zero_initialized_head_predicts_zero_noise() {
        let net = ConditionalUNet::<f32>::new(tiny(), &mut rng_from_seed(1)).unwrap();
        let c = cond(0);
        let eps = net.predict_noise(&image_to_state(&c.degraded), &c, 10).unwrap();
        assert_eq!(eps.dim(), (3, 8, 8));
        assert!(eps.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_prediction_equals_single() {
        let mut net = ConditionalUNet::<f32>::new(tiny(), &mut rng_from_seed(2)).unwrap();
        // Give the head weights so the output is non-trivial.
        let w = net.params.value_mut("conv_out.w").unwrap();
        w.iter_mut().enumerate().for_each(|(i, v)| *v = ((i % 7) as f32 - 3.0) * 0.01);
        let (c1, c2) = (cond(1), cond(5));
        let s1 = image_to_state(&c2.degraded);
        let s2 = image_to_state(&c1.degraded);
        let batch = net.predict_noise_batch(&[s1.clone(), s2.clone()], &[&c1, &c2], 77).unwrap();
        assert_eq!(batch[0], net.predict_noise(&s1, &c1, 77).unwrap());
        assert_eq!(batch[1], net.predict_noise(&s2, &c2, 77).unwrap());
        assert!(batch[0].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        let net = ConditionalUNet::<f32>::new(tiny(), &mut rng_from_seed(1)).unwrap();
        let img = ImageF::filled(6, 6, 3, 0.5).unwrap();
        let c = Condition::new(img.clone(), DegMask::zeros(6, 6)).unwrap();
        assert!(matches!(net.predict_noise(&image_to_state(&img), &c, 1), Err(Error::Shape(_))));
        let bad = DenoiserConfig { time_embed_dim: 5, ..tiny() };
        assert!(ConditionalUNet::<f32>::new(bad, &mut rng_from_seed(1)).is_err());
    }
}
