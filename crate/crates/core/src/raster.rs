//! Image-like grids: colour images, degradation masks, depth and transmission maps.
//!
//! Everything is stored row-major; colour images are interleaved (`H × W × C`).

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `H × W × C` image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageF {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageF {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from arbitrary values, clamping them into `[0, 1]`.
    /// Non-finite values become 0.
    pub fn from_clamped(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let data = data.into_iter().map(clamp_unit).collect();
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(clamp_unit(f(y, x, c)));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Pixel-aligned crop.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::shape(format!(
                "crop {height}x{width}@({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Self::from_fn(height, width, self.channels, |y, x, c| self.get(top + y, left + x, c))
    }

    pub fn same_spatial(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self::new(h as usize, w as usize, 3, data)
    }

    /// Writes an 8-bit PNG (RGB or grayscale, matching the channel count).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let result = if self.channels == 3 {
            RgbImage::from_raw(w, h, bytes)
                .expect("buffer length checked at construction")
                .save(path)
        } else {
            GrayImage::from_raw(w, h, bytes)
                .expect("buffer length checked at construction")
                .save(path)
        };
        result.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Rounds every intensity to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Self {
            data: self.data.iter().map(|&v| quantize(v) as f32 / 255.0).collect(),
            ..self.clone()
        }
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
fn quantize(v: f32) -> u8 {
    (clamp_unit(v) * 255.0).round() as u8
}

/// Per-pixel degradation occupancy in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegMask {
    height: usize,
    width: usize,
    values: Vec<f32>,
    binary: bool,
}

impl DegMask {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::shape(format!(
                "mask {height}x{width} with {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("mask value {v} outside [0, 1]")));
        }
        let binary = values.iter().all(|&v| v == 0.0 || v == 1.0);
        Ok(Self {
            height,
            width,
            values,
            binary,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("valid fill")
    }

    /// Thresholds a soft field at `threshold` into a binary mask.
    pub fn from_threshold(height: usize, width: usize, field: &[f32], threshold: f32) -> Result<Self> {
        let values = field
            .iter()
            .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
            .collect();
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_binary(&self) -> bool {
        self.binary
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn coverage(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// Pixelwise maximum of two congruent masks.
    pub fn union(&self, other: &DegMask) -> Result<DegMask> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::shape("mask union of different sizes"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.max(*b))
            .collect();
        DegMask::new(self.height, self.width, values)
    }

    /// Intersection over union of the nonzero supports.
    pub fn iou(&self, other: &DegMask) -> Result<f64> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::shape("mask iou of different sizes"));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.values.iter().zip(&other.values) {
            let (a, b) = (*a > 0.0, *b > 0.0);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::shape("mask crop out of bounds"));
        }
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(self.get(top + y, left + x));
            }
        }
        Self::new(height, width, values)
    }

    /// 8-bit single channel PNG, 255 for full occupancy.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.values.iter().map(|&v| quantize(v)).collect();
        ImageBuffer::<Luma<u8>, _>::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("length checked at construction")
            .save(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        let values = gray.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self::new(h as usize, w as usize, values)
    }
}

/// Nonnegative scene depth (arbitrary units).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::shape("depth map dimensions"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::param(format!("depth {v} must be finite and >= 0")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn constant(height: usize, width: usize, depth: f32) -> Result<Self> {
        Self::new(height, width, vec![depth; height * width])
    }

    /// Diagonal ramp normalized to `[0, 1]`: 0 at the top-left corner, 1 at the bottom-right.
    pub fn ramp(height: usize, width: usize) -> Self {
        let fy = if height > 1 { 1.0 / (height - 1) as f32 } else { 0.0 };
        let fx = if width > 1 { 1.0 / (width - 1) as f32 } else { 0.0 };
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(0.5 * (y as f32 * fy + x as f32 * fx));
            }
        }
        Self::new(height, width, values).expect("ramp is valid")
    }

    /// Reads a grayscale PNG, mapping 0..255 to depth 0..1.
    pub fn load_png(path: &Path) -> Result<Self> {
        let mask = DegMask::load_png(path)?;
        Self::new(mask.height, mask.width, mask.values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Per-pixel transmission in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl TransmissionMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::shape("transmission map dimensions"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::param(format!("transmission {v} outside (0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, t: f32) -> Result<Self> {
        Self::new(height, width, vec![t; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        DegMask::new(self.height, self.width, self.values.clone())?.save_png(path)
    }
}

/// Converts a colour image to an `RgbImage` (grayscale is replicated).
pub fn to_rgb8(img: &ImageF) -> RgbImage {
    ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let px = |c: usize| quantize(img.get(y as usize, x as usize, c.min(img.channels() - 1)));
        Rgb([px(0), px(1), px(2)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_shapes() {
        assert!(matches!(ImageF::new(1, 1, 1, vec![1.5]), Err(Error::Param(_))));
        assert!(matches!(ImageF::new(2, 1, 1, vec![0.5]), Err(Error::Shape(_))));
        assert!(matches!(ImageF::new(0, 1, 1, vec![]), Err(Error::Shape(_))));
        assert!(matches!(DepthMap::new(1, 1, vec![-1.0]), Err(Error::Param(_))));
        assert!(matches!(TransmissionMap::new(1, 1, vec![0.0]), Err(Error::Param(_))));
    }

    #[test]
    fn ramp_spans_unit_interval() {
        let d = DepthMap::ramp(5, 9);
        assert_eq!(d.values()[0], 0.0);
        assert_eq!(*d.values().last().unwrap(), 1.0);
        assert_eq!(DepthMap::ramp(1, 1).values(), &[0.0]);
    }

    #[test]
    fn binary_flag_tracks_content() {
        assert!(DegMask::new(1, 2, vec![0.0, 1.0]).unwrap().is_binary());
        assert!(!DegMask::new(1, 2, vec![0.0, 0.5]).unwrap().is_binary());
    }

    #[test]
    fn png_round_trip_is_quantized_identity() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageF::from_fn(4, 5, 3, |y, x, c| (y * 5 + x + c) as f32 / 40.0).unwrap();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        assert_eq!(ImageF::load_png(&path).unwrap(), img.quantized());

        let m = DegMask::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let mpath = dir.path().join("m.png");
        m.save_png(&mpath).unwrap();
        assert_eq!(DegMask::load_png(&mpath).unwrap(), m);
    }
}
