//! Procedural binary masks for rain streaks, snowflakes and adherent raindrops.
//!
//! Pixel `(y, x)` is sampled at the point `(x, y)`. Streaks and flakes are rendered
//! as anti-aliased coverage `clamp(extent + 0.5 − distance, 0, 1)` and then
//! thresholded at 0.5, so a pixel is set exactly when its sample point lies within
//! the shape. Raindrops use a metaball field so neighbouring drops merge.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::DegMask;
use crate::seed::rng_from_seed;

const COVERAGE_THRESHOLD: f32 = 0.5;
/// Upper clip of a single metaball term, reached at the drop centre.
const METABALL_CLIP: f32 = 1.0e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreakParams {
    pub count: usize,
    pub length_px: f32,
    /// Orientation from the horizontal axis; 90 is vertical.
    pub angle_deg: f32,
    pub thickness_px: f32,
}

impl StreakParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_px > 0.0 && self.thickness_px > 0.0 && self.angle_deg.is_finite()) {
            return Err(Error::param(format!("invalid streak parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnowParams {
    pub flake_count: usize,
    pub radius_range_px: (f32, f32),
}

impl SnowParams {
    pub fn validate(&self) -> Result<()> {
        validate_radius_range(self.radius_range_px)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaindropParams {
    pub drop_count: usize,
    pub radius_range_px: (f32, f32),
    pub metaball_threshold: f32,
}

impl RaindropParams {
    pub fn validate(&self) -> Result<()> {
        validate_radius_range(self.radius_range_px)?;
        if !(self.metaball_threshold > 0.0 && self.metaball_threshold.is_finite()) {
            return Err(Error::param(format!(
                "metaball threshold {} must be > 0",
                self.metaball_threshold
            )));
        }
        Ok(())
    }
}

fn validate_radius_range((lo, hi): (f32, f32)) -> Result<()> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::param(format!("radius range ({lo}, {hi})")));
    }
    Ok(())
}

/// A disk in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub cx: f32,
    pub cy: f32,
    pub radius: f32,
}

impl Disk {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (dx, dy) = (x as f32 - self.cx, y as f32 - self.cy);
        (dx * dx + dy * dy).sqrt() <= self.radius
    }
}

fn sample_range(rng: &mut impl rand::Rng, (lo, hi): (f32, f32)) -> f32 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn dist_to_segment(px: f32, py: f32, ax: f32, ay: f32, bx: f32, by: f32) -> f32 {
    let (vx, vy) = (bx - ax, by - ay);
    let len2 = vx * vx + vy * vy;
    let s = if len2 > 0.0 {
        (((px - ax) * vx + (py - ay) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (ax + s * vx - px, ay + s * vy - py);
    (qx * qx + qy * qy).sqrt()
}

/// Oriented line segments with uniformly random centres.
pub fn gen_streak_mask(height: usize, width: usize, params: &StreakParams, seed: u64) -> Result<DegMask> {
    params.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut coverage = vec![0.0f32; height * width];
    let theta = params.angle_deg.to_radians();
    let (ux, uy) = (theta.cos(), theta.sin());
    let half_len = 0.5 * params.length_px;
    let half_thick = 0.5 * params.thickness_px;
    for _ in 0..params.count {
        let cx = rng.random_range(0.0..width as f32);
        let cy = rng.random_range(0.0..height as f32);
        let (ax, ay) = (cx - half_len * ux, cy - half_len * uy);
        let (bx, by) = (cx + half_len * ux, cy + half_len * uy);
        let reach = half_thick + 1.0;
        let x0 = (ax.min(bx) - reach).floor().max(0.0) as usize;
        let x1 = ((ax.max(bx) + reach).ceil().max(0.0) as usize).min(width - 1);
        let y0 = (ay.min(by) - reach).floor().max(0.0) as usize;
        let y1 = ((ay.max(by) + reach).ceil().max(0.0) as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = dist_to_segment(x as f32, y as f32, ax, ay, bx, by);
                let cov = (half_thick + 0.5 - d).clamp(0.0, 1.0);
                let slot = &mut coverage[y * width + x];
                *slot = slot.max(cov);
            }
        }
    }
    DegMask::from_threshold(height, width, &coverage, COVERAGE_THRESHOLD)
}

/// Disk-shaped flakes; also returns the generated disks.
pub fn gen_snow_mask_with_flakes(
    height: usize,
    width: usize,
    params: &SnowParams,
    seed: u64,
) -> Result<(DegMask, Vec<Disk>)> {
    params.validate()?;
    let mut rng = rng_from_seed(seed);
    let flakes: Vec<Disk> = (0..params.flake_count)
        .map(|_| Disk {
            cx: rng.random_range(0.0..width as f32),
            cy: rng.random_range(0.0..height as f32),
            radius: sample_range(&mut rng, params.radius_range_px),
        })
        .collect();
    let mut coverage = vec![0.0f32; height * width];
    for disk in &flakes {
        let reach = disk.radius + 1.0;
        let x0 = (disk.cx - reach).floor().max(0.0) as usize;
        let x1 = ((disk.cx + reach).ceil() as usize).min(width - 1);
        let y0 = (disk.cy - reach).floor().max(0.0) as usize;
        let y1 = ((disk.cy + reach).ceil() as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f32 - disk.cx, y as f32 - disk.cy);
                let cov = (disk.radius + 0.5 - (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0);
                let slot = &mut coverage[y * width + x];
                *slot = slot.max(cov);
            }
        }
    }
    Ok((DegMask::from_threshold(height, width, &coverage, COVERAGE_THRESHOLD)?, flakes))
}

pub fn gen_snow_mask(height: usize, width: usize, params: &SnowParams, seed: u64) -> Result<DegMask> {
    gen_snow_mask_with_flakes(height, width, params, seed).map(|(m, _)| m)
}

/// Summed metaball field `Σ_k min(r_k² / ‖x − c_k‖², clip)`.
pub fn raindrop_field(height: usize, width: usize, drops: &[Disk]) -> Vec<f32> {
    let mut field = vec![0.0f32; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0f32;
            for d in drops {
                let (dx, dy) = (x as f32 - d.cx, y as f32 - d.cy);
                let d2 = dx * dx + dy * dy;
                let r2 = d.radius * d.radius;
                acc += if d2 * METABALL_CLIP <= r2 {
                    METABALL_CLIP
                } else {
                    r2 / d2
                };
            }
            field[y * width + x] = acc;
        }
    }
    field
}

pub fn raindrop_mask_from_drops(height: usize, width: usize, drops: &[Disk], threshold: f32) -> Result<DegMask> {
    DegMask::from_threshold(height, width, &raindrop_field(height, width, drops), threshold)
}

/// Metaball raindrops: `{x : Σ f_k(x) ≥ threshold}`.
pub fn gen_raindrop_mask(height: usize, width: usize, params: &RaindropParams, seed: u64) -> Result<DegMask> {
    params.validate()?;
    let mut rng = rng_from_seed(seed);
    let drops: Vec<Disk> = (0..params.drop_count)
        .map(|_| Disk {
            cx: rng.random_range(0.0..width as f32),
            cy: rng.random_range(0.0..height as f32),
            radius: sample_range(&mut rng, params.radius_range_px),
        })
        .collect();
    raindrop_mask_from_drops(height, width, &drops, params.metaball_threshold)
}
