//! Cluster generation from a single seed image by cropping, additive Gaussian
//! noise, or small rotations.
//!
//! Sample `i` of a cluster draws from its own ChaCha stream keyed by the
//! configured seed, so clusters are identical however they are scheduled and
//! the first `m` samples of a size-`n` cluster equal a size-`m` cluster.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub const CHANNELS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("image must be non-empty with {CHANNELS} channels: got {height}x{width} with {len} values")]
    BadImageShape { height: usize, width: usize, len: usize },
    #[error("pixel {index} = {value} outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f32 },
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
}

/// RGB image with values in `[0, 1]`, stored row-major with interleaved
/// channels (`[row][col][channel]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self, AugmentError> {
        if height == 0 || width == 0 || height * width * CHANNELS != pixels.len() {
            return Err(AugmentError::BadImageShape { height, width, len: pixels.len() });
        }
        if let Some(index) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(AugmentError::PixelOutOfRange { index, value: pixels[index] });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self, AugmentError> {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, pixels)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Result<Self, AugmentError> {
        let mut pixels = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    pixels.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * CHANNELS + c]
    }

    /// Planar copy, `[channel][row][col]`.
    pub fn to_planar(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; hw * CHANNELS];
        for (p, px) in self.pixels.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[c * hw + p] = px[c];
            }
        }
        out
    }

    fn from_unclamped(height: usize, width: usize, values: impl Iterator<Item = f64>) -> Self {
        let pixels = values.map(|v| v.clamp(0.0, 1.0) as f32).collect();
        Self { height, width, pixels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Crop,
    GaussianNoise,
    Rotation,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Crop, Method::GaussianNoise, Method::Rotation];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Crop => "crop",
            Method::GaussianNoise => "gaussian_noise",
            Method::Rotation => "rotation",
        })
    }
}

impl FromStr for Method {
    type Err = AugmentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "crop" => Ok(Method::Crop),
            "gaussian_noise" | "noise" => Ok(Method::GaussianNoise),
            "rotation" | "rotate" => Ok(Method::Rotation),
            other => Err(AugmentError::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub method: Method,
    /// Largest strip, in pixels, cut from each edge.
    pub crop_max_strip: usize,
    pub noise_mean: f64,
    /// Variance of the per-pixel noise, on the `[0, 1]` pixel scale.
    pub noise_var: f64,
    /// Rotation angles are uniform in `±rotation_max_deg` degrees.
    pub rotation_max_deg: f64,
    pub seed: u64,
}

impl AugmentConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        Self {
            method,
            crop_max_strip: 10,
            noise_mean: 0.0,
            noise_var: 0.01,
            rotation_max_deg: 10.0,
            seed,
        }
    }

    /// Checks the parameters the configured method uses against an image
    /// of the given size.
    pub fn validate(&self, height: usize, width: usize) -> Result<(), AugmentError> {
        let bad = |msg: String| Err(AugmentError::InvalidConfig(msg));
        match self.method {
            Method::Crop => {
                if self.crop_max_strip == 0 {
                    return bad("crop_max_strip must be at least 1".into());
                }
                if 2 * self.crop_max_strip >= height.min(width) {
                    return bad(format!(
                        "crop_max_strip {} would exhaust a {height}x{width} image (needs < min(H, W)/2)",
                        self.crop_max_strip
                    ));
                }
            }
            Method::GaussianNoise => {
                if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
                    return bad(format!("noise_var must be finite and >= 0 (got {})", self.noise_var));
                }
                if !self.noise_mean.is_finite() {
                    return bad("noise_mean must be finite".into());
                }
            }
            Method::Rotation => {
                if !(self.rotation_max_deg.is_finite() && self.rotation_max_deg >= 0.0) {
                    return bad(format!(
                        "rotation_max_deg must be finite and >= 0 (got {})",
                        self.rotation_max_deg
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Bilinear sample at fractional `(y, x)`; coordinates are clamped to the
/// rectangle `[top, bottom] x [left, right]`.
fn bilinear_clamped(img: &Image, y: f64, x: f64, c: usize, bounds: (usize, usize, usize, usize)) -> f64 {
    let (top, bottom, left, right) = bounds;
    let y = y.clamp(top as f64, bottom as f64);
    let x = x.clamp(left as f64, right as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(bottom);
    let x1 = (x0 + 1).min(right);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let v = |yy: usize, xx: usize| f64::from(img.get(yy, xx, c));
    let upper = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
    let lower = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
    upper * (1.0 - fy) + lower * fy
}

/// Bilinear sample where anything outside the frame reads as black.
fn bilinear_black(img: &Image, y: f64, x: f64, c: usize) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let v = |yy: f64, xx: f64| {
        if yy < 0.0 || xx < 0.0 || yy >= img.height as f64 || xx >= img.width as f64 {
            0.0
        } else {
            f64::from(img.get(yy as usize, xx as usize, c))
        }
    };
    let upper = v(y0, x0) * (1.0 - fx) + v(y0, x0 + 1.0) * fx;
    let lower = v(y0 + 1.0, x0) * (1.0 - fx) + v(y0 + 1.0, x0 + 1.0) * fx;
    upper * (1.0 - fy) + lower * fy
}

/// Cuts the given strips off each edge and rescales the remainder back to the
/// full size with bilinear interpolation (pixel-center aligned).
pub fn crop_and_resize(img: &Image, top: usize, bottom: usize, left: usize, right: usize) -> Result<Image, AugmentError> {
    let (h, w) = (img.height, img.width);
    if top + bottom >= h || left + right >= w {
        return Err(AugmentError::InvalidConfig(format!(
            "strips ({top}, {bottom}, {left}, {right}) exhaust a {h}x{w} image"
        )));
    }
    let kept_h = (h - top - bottom) as f64;
    let kept_w = (w - left - right) as f64;
    let sy = kept_h / h as f64;
    let sx = kept_w / w as f64;
    let bounds = (top, h - bottom - 1, left, w - right - 1);
    let mut values = Vec::with_capacity(img.pixels.len());
    for y in 0..h {
        let src_y = top as f64 + (y as f64 + 0.5) * sy - 0.5;
        for x in 0..w {
            let src_x = left as f64 + (x as f64 + 0.5) * sx - 0.5;
            for c in 0..CHANNELS {
                values.push(bilinear_clamped(img, src_y, src_x, c, bounds));
            }
        }
    }
    Ok(Image::from_unclamped(h, w, values.into_iter()))
}

/// Cuts an independent strip of `1..=crop_max_strip` pixels from every edge
/// and rescales back to the original size.
pub fn crop_augment(img: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Image, AugmentError> {
    cfg.validate(img.height, img.width)?;
    let mut strip = || rng.random_range(1..=cfg.crop_max_strip);
    let (top, bottom, left, right) = (strip(), strip(), strip(), strip());
    crop_and_resize(img, top, bottom, left, right)
}

/// Adds i.i.d. Gaussian noise to every pixel and channel, then clamps.
pub fn noise_augment(img: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Image, AugmentError> {
    if !(cfg.noise_var.is_finite() && cfg.noise_var >= 0.0 && cfg.noise_mean.is_finite()) {
        return Err(AugmentError::InvalidConfig(format!(
            "noise mean {} / variance {} invalid",
            cfg.noise_mean, cfg.noise_var
        )));
    }
    let normal = Normal::new(cfg.noise_mean, cfg.noise_var.sqrt())
        .map_err(|e| AugmentError::InvalidConfig(e.to_string()))?;
    let values: Vec<f64> = img
        .pixels
        .iter()
        .map(|&p| f64::from(p) + normal.sample(rng))
        .collect();
    Ok(Image::from_unclamped(img.height, img.width, values.into_iter()))
}

/// Rotates about the image center by `degrees` (counter-clockwise),
/// bilinear resampling, black outside the source frame.
pub fn rotate_by(img: &Image, degrees: f64) -> Image {
    let (h, w) = (img.height, img.width);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut values = Vec::with_capacity(img.pixels.len());
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            // inverse map: output pixel -> source coordinate
            let src_x = cos * dx - sin * dy + cx;
            let src_y = sin * dx + cos * dy + cy;
            for c in 0..CHANNELS {
                values.push(bilinear_black(img, src_y, src_x, c));
            }
        }
    }
    Image::from_unclamped(h, w, values.into_iter())
}

/// Rotates by an angle drawn uniformly from `±rotation_max_deg`.
pub fn rotate_augment(img: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Image, AugmentError> {
    cfg.validate(img.height, img.width)?;
    let limit = cfg.rotation_max_deg;
    let angle = rng.random_range(-limit..=limit);
    Ok(rotate_by(img, angle))
}

pub fn augment(img: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Image, AugmentError> {
    match cfg.method {
        Method::Crop => crop_augment(img, cfg, rng),
        Method::GaussianNoise => noise_augment(img, cfg, rng),
        Method::Rotation => rotate_augment(img, cfg, rng),
    }
}

/// The original image followed by `n - 1` augmentations of it.
pub fn generate_cluster(img: &Image, n: usize, cfg: &AugmentConfig) -> Result<Vec<Image>, AugmentError> {
    if n == 0 {
        return Err(AugmentError::InvalidConfig("cluster size must be at least 1".into()));
    }
    cfg.validate(img.height, img.width)?;
    let augmented: Result<Vec<Image>, AugmentError> = (1..n)
        .into_par_iter()
        .map(|i| augment(img, cfg, &mut rng::substream(cfg.seed, i as u64)))
        .collect();
    let mut cluster = Vec::with_capacity(n);
    cluster.push(img.clone());
    cluster.extend(augmented?);
    Ok(cluster)
}
