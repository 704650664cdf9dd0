use std::path::PathBuf;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::masks::{gen_raindrop_mask, gen_snow_mask, gen_streak_mask, RaindropParams, SnowParams, StreakParams};
use super::{reflect_g, reflect_t, transmission_from_depth, AtmosphericLight};
use crate::error::{Error, Result};
use crate::raster::{DegMask, DepthMap, ImageF, TransmissionMap};
use crate::seed::{derive_seed, rng_from_seed, stream};

/// Range the atmospheric light is drawn from when a recipe leaves it open.
pub const DEFAULT_LIGHT_RANGE: (f32, f32) = (0.7, 1.0);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DepthSource {
    #[default]
    Ramp,
    Constant {
        depth: f32,
    },
    /// Grayscale PNG, 0..255 mapped to depth 0..1.
    Provided {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazeParams {
    /// Scattering density per unit of depth.
    pub beta: f32,
    #[serde(default)]
    pub depth_source: DepthSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Streaks,
    Snow,
    Raindrops,
}

impl MaskKind {
    pub const DEFAULT_ORDER: [MaskKind; 3] = [MaskKind::Streaks, MaskKind::Snow, MaskKind::Raindrops];

    pub fn name(&self) -> &'static str {
        match self {
            MaskKind::Streaks => "streaks",
            MaskKind::Snow => "snow",
            MaskKind::Raindrops => "raindrops",
        }
    }

    fn stream(&self) -> u64 {
        match self {
            MaskKind::Streaks => stream::STREAKS,
            MaskKind::Snow => stream::SNOW,
            MaskKind::Raindrops => stream::RAINDROPS,
        }
    }
}

/// How mask degradations are stacked on the hazy image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// One compositing pass per mask, in `apply_order`.
    #[default]
    Sequential,
    /// A single pass with the union of all masks.
    Union,
}

/// Declarative description of a mixed corruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecipe {
    #[serde(default)]
    pub haze: Option<HazeParams>,
    #[serde(default)]
    pub streaks: Option<StreakParams>,
    #[serde(default)]
    pub snow: Option<SnowParams>,
    #[serde(default)]
    pub raindrops: Option<RaindropParams>,
    /// `None` draws a uniform value in [0.7, 1.0] from the recipe seed.
    #[serde(default)]
    pub atmospheric_light: Option<AtmosphericLight>,
    pub seed: u64,
    /// Order of the mask degradations; empty means streaks, snow, raindrops.
    #[serde(default)]
    pub apply_order: Vec<MaskKind>,
    #[serde(default)]
    pub mask_mode: MaskMode,
}

impl DegradationRecipe {
    /// No degradation at all.
    pub fn empty(seed: u64) -> Self {
        Self {
            haze: None,
            streaks: None,
            snow: None,
            raindrops: None,
            atmospheric_light: None,
            seed,
            apply_order: Vec::new(),
            mask_mode: MaskMode::Sequential,
        }
    }

    pub fn is_enabled(&self, kind: MaskKind) -> bool {
        match kind {
            MaskKind::Streaks => self.streaks.is_some(),
            MaskKind::Snow => self.snow.is_some(),
            MaskKind::Raindrops => self.raindrops.is_some(),
        }
    }

    /// Number of enabled mask degradations (0..=3).
    pub fn mask_degradation_count(&self) -> usize {
        MaskKind::DEFAULT_ORDER.iter().filter(|k| self.is_enabled(**k)).count()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(h) = &self.haze {
            if !(h.beta > 0.0 && h.beta.is_finite()) {
                return Err(Error::param(format!("haze beta {} must be > 0", h.beta)));
            }
            if let DepthSource::Constant { depth } = h.depth_source {
                if !(depth >= 0.0 && depth.is_finite()) {
                    return Err(Error::param(format!("constant depth {depth}")));
                }
            }
        }
        if let Some(p) = &self.streaks {
            p.validate()?;
        }
        if let Some(p) = &self.snow {
            p.validate()?;
        }
        if let Some(p) = &self.raindrops {
            p.validate()?;
        }
        if let Some(l) = &self.atmospheric_light {
            l.validate()?;
        }
        self.resolved_order().map(|_| ())
    }

    /// The mask degradations in application order.
    pub fn resolved_order(&self) -> Result<Vec<MaskKind>> {
        if self.apply_order.is_empty() {
            return Ok(MaskKind::DEFAULT_ORDER
                .into_iter()
                .filter(|k| self.is_enabled(*k))
                .collect());
        }
        for (i, k) in self.apply_order.iter().enumerate() {
            if !self.is_enabled(*k) {
                return Err(Error::param(format!("apply_order lists disabled {}", k.name())));
            }
            if self.apply_order[..i].contains(k) {
                return Err(Error::param(format!("apply_order repeats {}", k.name())));
            }
        }
        if self.apply_order.len() != self.mask_degradation_count() {
            return Err(Error::param("apply_order omits an enabled degradation"));
        }
        Ok(self.apply_order.clone())
    }

    pub fn resolved_light(&self) -> AtmosphericLight {
        self.atmospheric_light.unwrap_or_else(|| {
            let mut rng = rng_from_seed(derive_seed(self.seed, stream::ATMOSPHERIC_LIGHT));
            AtmosphericLight::Uniform(rng.random_range(DEFAULT_LIGHT_RANGE.0..=DEFAULT_LIGHT_RANGE.1))
        })
    }

    /// Generates the mask for one enabled degradation.
    pub fn mask_for(&self, kind: MaskKind, height: usize, width: usize) -> Result<DegMask> {
        let seed = derive_seed(self.seed, kind.stream());
        match kind {
            MaskKind::Streaks => gen_streak_mask(height, width, self.streaks.as_ref().ok_or_else(|| disabled(kind))?, seed),
            MaskKind::Snow => gen_snow_mask(height, width, self.snow.as_ref().ok_or_else(|| disabled(kind))?, seed),
            MaskKind::Raindrops => {
                gen_raindrop_mask(height, width, self.raindrops.as_ref().ok_or_else(|| disabled(kind))?, seed)
            }
        }
    }
}

fn disabled(kind: MaskKind) -> Error {
    Error::param(format!("{} is not enabled", kind.name()))
}

/// Output of [`compose_mixed`].
#[derive(Debug, Clone)]
pub struct Composite {
    pub degraded: ImageF,
    /// Per-degradation masks in application order.
    pub masks: Vec<(MaskKind, DegMask)>,
    pub transmission: Option<TransmissionMap>,
    /// Pixelwise maximum over all masks (all zero when there are none).
    pub union_mask: DegMask,
    pub atmospheric_light: AtmosphericLight,
}

/// Applies a recipe to a clean image.
pub fn compose_mixed(clean: &ImageF, recipe: &DegradationRecipe) -> Result<Composite> {
    compose_mixed_with_depth(clean, recipe, None)
}

/// Like [`compose_mixed`], with an explicit depth map taking precedence over the
/// recipe's depth source.
pub fn compose_mixed_with_depth(
    clean: &ImageF,
    recipe: &DegradationRecipe,
    depth: Option<&DepthMap>,
) -> Result<Composite> {
    recipe.validate()?;
    let (h, w) = (clean.height(), clean.width());
    let light = recipe.resolved_light();

    let mut current = clean.clone();
    let mut transmission = None;
    if let Some(haze) = &recipe.haze {
        let loaded;
        let depth = match (depth, &haze.depth_source) {
            (Some(d), _) => d,
            (None, DepthSource::Ramp) => {
                loaded = DepthMap::ramp(h, w);
                &loaded
            }
            (None, DepthSource::Constant { depth }) => {
                loaded = DepthMap::constant(h, w, *depth)?;
                &loaded
            }
            (None, DepthSource::Provided { path }) => {
                loaded = DepthMap::load_png(path)?;
                &loaded
            }
        };
        if depth.height() != h || depth.width() != w {
            return Err(Error::shape(format!(
                "depth {}x{} vs image {h}x{w}",
                depth.height(),
                depth.width()
            )));
        }
        let t = transmission_from_depth(depth, haze.beta)?;
        current = reflect_t(&current, &t, light)?;
        transmission = Some(t);
    }

    let masks = recipe
        .resolved_order()?
        .into_iter()
        .map(|k| recipe.mask_for(k, h, w).map(|m| (k, m)))
        .collect::<Result<Vec<_>>>()?;
    let mut union_mask = DegMask::zeros(h, w);
    for (_, m) in &masks {
        union_mask = union_mask.union(m)?;
    }

    match recipe.mask_mode {
        MaskMode::Sequential => {
            for (_, m) in &masks {
                current = reflect_g(&current, m, light)?;
            }
        }
        MaskMode::Union if !masks.is_empty() => {
            current = reflect_g(&current, &union_mask, light)?;
        }
        MaskMode::Union => {}
    }

    Ok(Composite {
        degraded: current,
        masks,
        transmission,
        union_mask,
        atmospheric_light: light,
    })
}
