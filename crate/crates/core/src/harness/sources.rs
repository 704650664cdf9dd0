use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::ImageF;
use crate::seed::{rng_from_seed, Rng};

/// Where clean images come from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CleanSource {
    /// Gradient fields, shape collages and checker textures.
    #[default]
    Procedural,
    /// Every `*.png` in a directory (sorted by name), centre-cropped to size.
    PngDir { path: PathBuf },
}

fn color(rng: &mut Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// One procedural RGB image; the pattern family cycles with `index`.
pub fn procedural_image(index: usize, size: usize, seed: u64) -> Result<ImageF> {
    if size == 0 {
        return Err(Error::param("image size must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let s = size as f32;
    match index % 3 {
        0 => {
            let (c0, c1) = (color(&mut rng), color(&mut rng));
            let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let (dx, dy) = (theta.cos(), theta.sin());
            let norm = dx.abs() + dy.abs();
            ImageF::from_fn(size, size, 3, |y, x, c| {
                let u = ((x as f32 / s - 0.5) * dx + (y as f32 / s - 0.5) * dy) / norm + 0.5;
                c0[c] + (c1[c] - c0[c]) * u
            })
        }
        1 => {
            let bg = color(&mut rng);
            let shapes: Vec<(bool, f32, f32, f32, f32, [f32; 3])> = (0..rng.random_range(3..7))
                .map(|_| {
                    (
                        rng.random_bool(0.5),
                        rng.random_range(0.0..s),
                        rng.random_range(0.0..s),
                        rng.random_range(s / 8.0..s / 3.0),
                        rng.random_range(s / 8.0..s / 3.0),
                        color(&mut rng),
                    )
                })
                .collect();
            ImageF::from_fn(size, size, 3, |y, x, c| {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let mut v = bg[c];
                for (disk, cx, cy, a, b, col) in &shapes {
                    let inside = if *disk {
                        (px - cx).powi(2) + (py - cy).powi(2) <= a * a
                    } else {
                        (px - cx).abs() <= *a && (py - cy).abs() <= *b
                    };
                    if inside {
                        v = col[c];
                    }
                }
                v
            })
        }
        _ => {
            let (c0, c1) = (color(&mut rng), color(&mut rng));
            let period = rng.random_range(4..=8usize);
            let (oy, ox) = (rng.random_range(0..period), rng.random_range(0..period));
            ImageF::from_fn(size, size, 3, |y, x, c| {
                if ((y + oy) / period + (x + ox) / period) % 2 == 0 {
                    c0[c]
                } else {
                    c1[c]
                }
            })
        }
    }
}

/// Sorted PNG paths of a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::param(format!("no PNG files in {}", dir.display())));
    }
    Ok(out)
}

/// Loads `path` and takes the centred `size × size` crop.
pub fn load_cropped(path: &Path, size: usize) -> Result<ImageF> {
    let img = ImageF::load_png(path)?;
    if img.height() < size || img.width() < size {
        return Err(Error::shape(format!(
            "{} is {}x{}, smaller than {size}",
            path.display(),
            img.height(),
            img.width()
        )));
    }
    img.crop((img.height() - size) / 2, (img.width() - size) / 2, size, size)
}
