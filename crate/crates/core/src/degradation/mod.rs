//! Physical mixed-degradation model.
//!
//! Two compositing primitives pull pixels toward the atmospheric light `A`:
//! the mask compositor `G(a, b) = a·(1−b) + A·b` used for rain streaks, snow
//! and raindrops, and the transmission compositor `T(a, t) = a·t + A·(1−t)`
//! used for haze. A mixed corruption is haze first, then any number of mask
//! degradations on top.

mod masks;
mod predict;
mod recipe;

pub use masks::{
    gen_raindrop_mask, gen_snow_mask, gen_snow_mask_with_flakes, gen_streak_mask, raindrop_field,
    raindrop_mask_from_drops, Disk, RaindropParams, SnowParams, StreakParams,
};
pub use predict::predict_mask_baseline;
pub use recipe::{
    compose_mixed, compose_mixed_with_depth, Composite, DegradationRecipe, DepthSource,
    HazeParams, MaskKind, MaskMode,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DegMask, DepthMap, ImageF, TransmissionMap};

/// Global veiling light, either one value for all channels or one per RGB channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AtmosphericLight {
    Uniform(f32),
    PerChannel([f32; 3]),
}

impl AtmosphericLight {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            AtmosphericLight::Uniform(v) => (0.0..=1.0).contains(v),
            AtmosphericLight::PerChannel(vs) => vs.iter().all(|v| (0.0..=1.0).contains(v)),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("atmospheric light {self:?} outside [0, 1]")))
        }
    }

    /// Value for channel `c` of an image with `channels` channels.
    pub fn component(&self, c: usize, channels: usize) -> Result<f32> {
        match (self, channels) {
            (AtmosphericLight::Uniform(v), _) => Ok(*v),
            (AtmosphericLight::PerChannel(vs), 3) => Ok(vs[c]),
            (AtmosphericLight::PerChannel(_), n) => Err(Error::shape(format!(
                "per-channel atmospheric light on a {n}-channel image"
            ))),
        }
    }

    fn per_channel(&self, channels: usize) -> Result<Vec<f32>> {
        self.validate()?;
        (0..channels).map(|c| self.component(c, channels)).collect()
    }
}

/// Mask compositor: `a·(1−b) + A·b`, mask broadcast over channels.
pub fn reflect_g(a: &ImageF, b: &DegMask, light: AtmosphericLight) -> Result<ImageF> {
    if !a.same_spatial(b.height(), b.width()) {
        return Err(Error::shape(format!(
            "image {}x{} vs mask {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let c = a.channels();
    let light = light.per_channel(c)?;
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = b.values()[i / c];
            v * (1.0 - m) + light[i % c] * m
        })
        .collect();
    ImageF::from_clamped(a.height(), a.width(), c, data)
}

/// Transmission compositor: `a·t + A·(1−t)`.
pub fn reflect_t(a: &ImageF, t: &TransmissionMap, light: AtmosphericLight) -> Result<ImageF> {
    if !a.same_spatial(t.height(), t.width()) {
        return Err(Error::shape(format!(
            "image {}x{} vs transmission {}x{}",
            a.height(),
            a.width(),
            t.height(),
            t.width()
        )));
    }
    let c = a.channels();
    let light = light.per_channel(c)?;
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let tv = t.values()[i / c];
            v * tv + light[i % c] * (1.0 - tv)
        })
        .collect();
    ImageF::from_clamped(a.height(), a.width(), c, data)
}

/// `t = exp(−β·d)`.
pub fn transmission_from_depth(depth: &DepthMap, beta: f32) -> Result<TransmissionMap> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::param(format!("scattering density {beta} must be > 0")));
    }
    let values = depth
        .values()
        .iter()
        // exp underflows to 0 for huge optical depths; keep the map inside (0, 1].
        .map(|&d| (-beta * d).exp().max(f32::MIN_POSITIVE))
        .collect();
    TransmissionMap::new(depth.height(), depth.width(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(v: f32) -> ImageF {
        ImageF::filled(3, 4, 3, v).unwrap()
    }

    #[test]
    fn g_identities_are_exact() {
        let a = ImageF::from_fn(3, 4, 3, |y, x, c| (y + 2 * x + c) as f32 / 13.0).unwrap();
        let l = AtmosphericLight::Uniform(0.83);
        assert_eq!(reflect_g(&a, &DegMask::zeros(3, 4), l).unwrap(), a);
        let full = reflect_g(&a, &DegMask::ones(3, 4), l).unwrap();
        assert!(full.data().iter().all(|&v| v == 0.83));
    }

    #[test]
    fn g_half_mask_blends() {
        let out = reflect_g(&gray(0.2), &DegMask::filled(3, 4, 0.5), AtmosphericLight::Uniform(0.8)).unwrap();
        for &v in out.data() {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn t_identities_and_blend() {
        let a = gray(0.4);
        let l = AtmosphericLight::Uniform(1.0);
        assert_eq!(reflect_t(&a, &TransmissionMap::filled(3, 4, 1.0).unwrap(), l).unwrap(), a);
        let opaque = reflect_t(&a, &TransmissionMap::filled(3, 4, 1e-6).unwrap(), l).unwrap();
        assert!(opaque.data().iter().all(|&v| (v - 1.0).abs() < 1e-5));
        let half = reflect_t(&a, &TransmissionMap::filled(3, 4, 0.5).unwrap(), l).unwrap();
        assert!(half.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn per_channel_light_applies_per_channel() {
        let a = gray(0.0);
        let out = reflect_g(&a, &DegMask::ones(3, 4), AtmosphericLight::PerChannel([0.1, 0.2, 0.3])).unwrap();
        assert_eq!(&out.data()[..3], &[0.1, 0.2, 0.3]);
        let mono = ImageF::filled(3, 4, 1, 0.0).unwrap();
        assert!(reflect_g(&mono, &DegMask::ones(3, 4), AtmosphericLight::PerChannel([0.1, 0.2, 0.3])).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = gray(0.5);
        assert!(matches!(
            reflect_g(&a, &DegMask::zeros(4, 3), AtmosphericLight::Uniform(0.5)),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            reflect_t(&a, &TransmissionMap::filled(2, 2, 0.5).unwrap(), AtmosphericLight::Uniform(0.5)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn transmission_values() {
        let zero = DepthMap::constant(2, 2, 0.0).unwrap();
        assert!(transmission_from_depth(&zero, 0.8).unwrap().values().iter().all(|&t| t == 1.0));
        let one = DepthMap::constant(2, 2, 1.0).unwrap();
        let t = transmission_from_depth(&one, std::f32::consts::LN_2).unwrap();
        assert!(t.values().iter().all(|&t| (t - 0.5).abs() < 1e-6));
        assert!(matches!(transmission_from_depth(&one, 0.0), Err(Error::Param(_))));
        assert!(matches!(transmission_from_depth(&one, -1.0), Err(Error::Param(_))));
        let far = DepthMap::constant(1, 1, 1e6).unwrap();
        assert!(transmission_from_depth(&far, 10.0).unwrap().values()[0] > 0.0);
    }

    #[test]
    fn haze_tiers_have_distinct_mean_transmission() {
        let ramp = DepthMap::ramp(64, 64);
        let means: Vec<f64> = [0.4, 0.8, 1.6]
            .iter()
            .map(|&b| transmission_from_depth(&ramp, b).unwrap().mean())
            .collect();
        assert!((means[0] - 0.82).abs() < 0.02, "{means:?}");
        assert!((means[1] - 0.67).abs() < 0.02, "{means:?}");
        assert!((means[2] - 0.45).abs() < 0.04, "{means:?}");
    }
}
