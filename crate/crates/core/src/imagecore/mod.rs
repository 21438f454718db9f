//! Image containers and the pixel-level operations every pipeline shares.
//!
//! Pixels are `f64` in `[0, 1]`, stored row-major with interleaved RGB.

mod io;
mod noise;
mod transform;

pub use io::{load_image, save_image, ImageFormat};
pub use noise::{add_gaussian_noise, calibrate_noise_to_ssim, calibrate_sigma, NoiseCalibration};
pub use transform::{
    crop, crop_box, fit_longer_side, resize, resize_gray, resize_gray_to, resize_to, BilinearMap,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Channel weights of the luma conversion used throughout the crate.
pub const GRAY_WEIGHTS: [f64; 3] = [0.30, 0.59, 0.11];

/// Largest number of samples an image may hold.
pub const MAX_SAMPLES: usize = 1 << 28;

/// A three-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, 3)?;
        if data.len() != height * width * 3 {
            return Err(Error::mismatch(height * width * 3, data.len()));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds an image from arbitrary values, clamping each into `[0, 1]`.
    /// NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Applies `f` to every sample and clamps the result back into `[0, 1]`.
    pub fn map_clamped(&self, mut f: impl FnMut(usize, f64) -> f64) -> Image {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let r = f(i, v);
                if r.is_nan() {
                    0.0
                } else {
                    r.clamp(0.0, 1.0)
                }
            })
            .collect();
        Image {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn to_grayscale(&self) -> GrayImage {
        to_grayscale(self)
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Single-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, 1)?;
        if data.len() != height * width {
            return Err(Error::mismatch(height * width, data.len()));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x).clamp(0.0, 1.0));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Replicates the gray channel into an RGB image.
    pub fn to_rgb(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }
}

/// 8-bit image, the on-disk representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// `round(p * 255)` per sample, half away from zero.
pub fn quantize(img: &Image) -> QuantizedImage {
    QuantizedImage {
        height: img.height,
        width: img.width,
        channels: 3,
        data: img.data.iter().map(|&p| quantize_value(p)).collect(),
    }
}

#[inline]
pub fn quantize_value(p: f64) -> u8 {
    // f64::round rounds half away from zero
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn dequantize(q: &QuantizedImage) -> Image {
    Image {
        height: q.height,
        width: q.width,
        data: q.data.iter().map(|&b| f64::from(b) / 255.0).collect(),
    }
}

/// `quantize` followed by `dequantize`: what survives an 8-bit save.
pub fn round_trip_8bit(img: &Image) -> Image {
    dequantize(&quantize(img))
}

pub fn to_grayscale(img: &Image) -> GrayImage {
    let [wr, wg, wb] = GRAY_WEIGHTS;
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| (wr * p[0] + wg * p[1] + wb * p[2]).clamp(0.0, 1.0))
        .collect();
    GrayImage {
        height: img.height,
        width: img.width,
        data,
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("empty image {height}x{width}")));
    }
    match height.checked_mul(width).and_then(|n| n.checked_mul(channels)) {
        Some(n) if n <= MAX_SAMPLES => Ok(()),
        _ => Err(Error::Data(format!("dimension overflow: {height}x{width}x{channels}"))),
    }
}
