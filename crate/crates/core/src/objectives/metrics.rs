use crate::error::{Error, Result};
use crate::raster::ImageF;

/// Reported PSNR when the images (nearly) coincide.
pub const PSNR_CAP_DB: f64 = 100.0;
const PSNR_MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_congruent(a: &ImageF, b: &ImageF) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("metric on {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &ImageF, b: &ImageF) -> Result<f64> {
    check_congruent(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// PSNR for unit-range images.
pub fn psnr(a: &ImageF, b: &ImageF) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < PSNR_MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        -10.0 * mse.log10()
    }
}

/// Normalized Gaussian weights of odd side `size`.
fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut w = Vec::with_capacity(size * size);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx);
        }
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Windowed SSIM over valid window positions, averaged per channel then over
/// channels. Images smaller than the window use the largest odd window that fits.
pub fn ssim(a: &ImageF, b: &ImageF) -> Result<f64> {
    check_congruent(a, b)?;
    let (h, w, ch) = a.dims();
    let side = h.min(w);
    let size = if side >= SSIM_WINDOW { SSIM_WINDOW } else if side % 2 == 1 { side } else { side - 1 };
    let win = gaussian_window(size, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for c in 0..ch {
        let mut sum = 0.0;
        let mut count = 0usize;
        for top in 0..=h - size {
            for left in 0..=w - size {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..size {
                    for dx in 0..size {
                        let k = win[dy * size + dx];
                        let x = a.get(top + dy, left + dx, c) as f64;
                        let y = b.get(top + dy, left + dx, c) as f64;
                        mx += k * x;
                        my += k * y;
                        xx += k * x * x;
                        yy += k * y * y;
                        xy += k * x * y;
                    }
                }
                let vx = xx - mx * mx;
                let vy = yy - my * my;
                let cov = xy - mx * my;
                sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    Ok(total / ch as f64)
}
