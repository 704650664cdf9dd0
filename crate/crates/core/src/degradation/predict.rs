use super::AtmosphericLight;
use crate::error::{Error, Result};
use crate::raster::{DegMask, ImageF};

/// Residual-threshold mask estimate: a pixel is flagged when every channel lies
/// within `threshold` of the atmospheric light, since occluded pixels are
/// replaced by it.
pub fn predict_mask_baseline(image: &ImageF, light: AtmosphericLight, threshold: f32) -> Result<DegMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::param(format!("threshold {threshold} outside (0, 1)")));
    }
    light.validate()?;
    let c = image.channels();
    let light: Vec<f32> = (0..c).map(|k| light.component(k, c)).collect::<Result<_>>()?;
    let values = image
        .data()
        .chunks_exact(c)
        .map(|px| {
            let dist = px
                .iter()
                .zip(&light)
                .map(|(v, a)| (v - a).abs())
                .fold(0.0f32, f32::max);
            if dist < threshold {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    DegMask::new(image.height(), image.width(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::{compose_mixed, reflect_g, DegradationRecipe, StreakParams};

    #[test]
    fn full_mask_is_fully_recovered() {
        let j = ImageF::from_fn(8, 8, 3, |y, x, _| (y * 8 + x) as f32 / 64.0).unwrap();
        let light = AtmosphericLight::Uniform(0.85);
        let i = reflect_g(&j, &DegMask::ones(8, 8), light).unwrap();
        for t in [1e-4, 0.1, 0.9] {
            assert_eq!(predict_mask_baseline(&i, light, t).unwrap().count_nonzero(), 64);
        }
    }

    #[test]
    fn dark_image_yields_empty_mask() {
        let t = 0.1;
        let a = 0.9;
        let j = ImageF::from_fn(8, 8, 3, |y, x, c| ((y + x + c) as f32 / 20.0) * (a - 2.0 * t)).unwrap();
        assert!(j.data().iter().all(|&v| v <= a - 2.0 * t));
        let m = predict_mask_baseline(&j, AtmosphericLight::Uniform(a), t).unwrap();
        assert_eq!(m.count_nonzero(), 0);
    }

    #[test]
    fn recovers_synthesized_streaks() {
        for seed in 0..10 {
            let j = ImageF::from_fn(32, 32, 3, |y, x, c| 0.05 + 0.4 * ((x * 7 + y * 3 + c) % 17) as f32 / 17.0).unwrap();
            let mut r = DegradationRecipe::empty(seed);
            r.streaks = Some(StreakParams {
                count: 8,
                length_px: 10.0,
                angle_deg: 80.0,
                thickness_px: 1.0,
            });
            r.atmospheric_light = Some(AtmosphericLight::Uniform(0.9));
            let out = compose_mixed(&j, &r).unwrap();
            let pred = predict_mask_baseline(&out.degraded, out.atmospheric_light, 0.1).unwrap();
            assert!(pred.iou(&out.union_mask).unwrap() >= 0.5);
        }
    }

    #[test]
    fn threshold_domain() {
        let j = ImageF::filled(2, 2, 1, 0.5).unwrap();
        assert!(predict_mask_baseline(&j, AtmosphericLight::Uniform(0.5), 0.0).is_err());
        assert!(predict_mask_baseline(&j, AtmosphericLight::Uniform(0.5), 1.0).is_err());
    }
}
