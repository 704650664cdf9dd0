use std::path::{Path, PathBuf};

use crate::degradation::{predict_mask_baseline, AtmosphericLight};
use crate::diffusion::{restore, Condition, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{ConditionalUNet, Refiner, UncertaintyMaps};
use crate::raster::{DegMask, ImageF};
use crate::seed::{derive_seed, rng_from_seed};

/// Where the conditioning mask comes from at restoration time.
#[derive(Debug, Clone)]
pub enum MaskSource {
    /// The ground-truth mask recorded at synthesis.
    Oracle(DegMask),
    /// Pixels close to the atmospheric light.
    Baseline { light: AtmosphericLight, threshold: f32 },
    /// A grayscale PNG.
    File(PathBuf),
}

pub fn resolve_mask(source: &MaskSource, image: &ImageF) -> Result<DegMask> {
    let mask = match source {
        MaskSource::Oracle(m) => m.clone(),
        MaskSource::Baseline { light, threshold } => predict_mask_baseline(image, *light, *threshold)?,
        MaskSource::File(p) => DegMask::load_png(p)?,
    };
    if !image.same_spatial(mask.height(), mask.width()) {
        return Err(Error::shape(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        )));
    }
    Ok(mask)
}

#[derive(Debug, Clone)]
pub struct RestoreOutput {
    pub coarse: ImageF,
    pub refined: ImageF,
    /// Per refiner scale; empty without a refiner.
    pub uncertainty: Vec<UncertaintyMaps>,
}

/// Seeds of the sampling noise and of the refiner's channel drops for one run.
pub fn restore_seeds(seed: u64) -> (u64, u64) {
    (derive_seed(seed, 0), derive_seed(seed, 1))
}

/// Implicit sampling with the denoiser, then (optionally) refinement.
pub fn restore_image(
    condition: &Condition,
    denoiser: &ConditionalUNet<f32>,
    refiner: Option<&Refiner<f32>>,
    schedule: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<RestoreOutput> {
    let (sample_seed, refine_seed) = restore_seeds(seed);
    let coarse = restore(condition, denoiser, schedule, steps, &mut rng_from_seed(sample_seed))?;
    refine_coarse(coarse, refiner, refine_seed)
}

pub fn refine_coarse(coarse: ImageF, refiner: Option<&Refiner<f32>>, refine_seed: u64) -> Result<RestoreOutput> {
    match refiner {
        Some(r) => {
            let out = r.refine(&coarse, &mut rng_from_seed(refine_seed))?;
            Ok(RestoreOutput {
                coarse,
                refined: out.refined,
                uncertainty: out.scales,
            })
        }
        None => Ok(RestoreOutput {
            refined: coarse.clone(),
            coarse,
            uncertainty: Vec::new(),
        }),
    }
}

fn save_map(map: &ndarray::Array2<f32>, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let img = ImageF::from_fn(h, w, 1, |y, x, _| map[[y, x]])?;
    img.save_png(path)
}

/// Writes `refined.png`, `coarse.png` and, per scale `l`, `u_{l}.png`,
/// `u_a_{l}.png` and `u_e_{l}.png` (clamped to `[0, 1]`, scaled ×255).
pub fn save_restore_output(out: &RestoreOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    out.refined.save_png(&dir.join("refined.png"))?;
    out.coarse.save_png(&dir.join("coarse.png"))?;
    for (l, m) in out.uncertainty.iter().enumerate() {
        save_map(&m.u, &dir.join(format!("u_{l}.png")))?;
        save_map(&m.u_a, &dir.join(format!("u_a_{l}.png")))?;
        save_map(&m.u_e, &dir.join(format!("u_e_{l}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenoiserConfig, RefinerConfig};

    fn nets() -> (ConditionalUNet<f32>, Refiner<f32>) {
        let d = DenoiserConfig {
            base_channels: 4,
            time_embed_dim: 8,
            ..Default::default()
        };
        let r = RefinerConfig {
            base_channels: 4,
            ..Default::default()
        };
        (
            ConditionalUNet::new(d, &mut rng_from_seed(1)).unwrap(),
            Refiner::new(r, &mut rng_from_seed(2)).unwrap(),
        )
    }

    #[test]
    fn oracle_and_file_masks_agree() {
        let img = ImageF::from_fn(8, 8, 3, |y, x, _| ((y + x) % 4) as f32 / 4.0).unwrap();
        let mask = DegMask::from_threshold(8, 8, &(0..64).map(|i| (i % 5) as f32).collect::<Vec<_>>(), 2.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        mask.save_png(&p).unwrap();
        let a = resolve_mask(&MaskSource::Oracle(mask.clone()), &img).unwrap();
        let b = resolve_mask(&MaskSource::File(p), &img).unwrap();
        assert_eq!(a, b);

        let (d, r) = nets();
        let s = NoiseSchedule::default_linear();
        let ca = Condition::new(img.clone(), a).unwrap();
        let cb = Condition::new(img.clone(), b).unwrap();
        let oa = restore_image(&ca, &d, Some(&r), &s, 5, 9).unwrap();
        let ob = restore_image(&cb, &d, Some(&r), &s, 5, 9).unwrap();
        assert_eq!(oa.refined, ob.refined);
        assert_eq!(oa.uncertainty.len(), 2);
        save_restore_output(&oa, &dir.path().join("out")).unwrap();
        assert!(dir.path().join("out/u_e_1.png").exists());
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let img = ImageF::filled(8, 8, 3, 0.5).unwrap();
        assert!(resolve_mask(&MaskSource::Oracle(DegMask::zeros(8, 6)), &img).is_err());
        let m = resolve_mask(
            &MaskSource::Baseline {
                light: AtmosphericLight::Uniform(0.5),
                threshold: 0.1,
            },
            &img,
        )
        .unwrap();
        assert_eq!(m.count_nonzero(), 64);
    }
}
