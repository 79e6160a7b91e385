//! Image container, PNG I/O, noise injection and PSNR.
//!
//! Samples are stored planar (channel-major, then row-major) in display
//! scale `[0, 255]`. Values may leave that range during optimization; they
//! are clamped only when written to disk.

use std::path::Path;

use image::{ColorType, DynamicImage, GrayImage, ImageReader, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak value of the display scale.
pub const PEAK: f64 = 255.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::shape(
                format!("{expected} samples ({width}x{height}x{channels})"),
                format!("{} samples", data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty image");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds an image from `f(channel, row, col)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self::new(width, height, channels, data).expect("dimensions checked by construction")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width)` of one channel plane.
    pub fn plane_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub(crate) fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(self.shape_string(), other.shape_string()))
        }
    }

    /// Same dimensions, new samples.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.width, self.height, self.channels, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..self.clone()
        })
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    /// Crops `height x width` around the center (top-left biased on odd slack).
    pub fn center_crop(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || width > self.width || height > self.height {
            return Err(Error::InvalidArgument(format!(
                "cannot crop {} to {width}x{height}",
                self.shape_string()
            )));
        }
        let top = (self.height - height) / 2;
        let left = (self.width - width) / 2;
        Ok(Self::from_fn(width, height, self.channels, |c, r, col| {
            self.get(c, r + top, col + left)
        }))
    }

    /// Converts to 8-bit samples: clamp to `[0, 255]`, round half away from zero.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| {
                let v = if v.is_nan() { 0.0 } else { v };
                v.clamp(0.0, PEAK).round() as u8
            })
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path).map_err(|e| Error::ImageRead {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    let reader = reader.with_guessed_format().map_err(|e| Error::ImageRead {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    if reader.format() != Some(image::ImageFormat::Png) {
        return Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: "only PNG files are supported".into(),
        });
    }
    let decoded = reader.decode().map_err(|e| Error::ImageRead {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    match decoded.color() {
        ColorType::L8 => {
            let gray = decoded.into_luma8();
            let data = gray.into_raw().into_iter().map(f64::from).collect();
            Image::new(width, height, 1, data)
        }
        ColorType::Rgb8 => {
            let rgb = decoded.into_rgb8();
            let raw = rgb.into_raw();
            let n = width * height;
            let mut data = vec![0.0; 3 * n];
            for (i, px) in raw.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[c * n + i] = f64::from(px[c]);
                }
            }
            Image::new(width, height, 3, data)
        }
        other => Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: format!("expected 8-bit grayscale or RGB, found {other:?}"),
        }),
    }
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width as u32, img.height as u32);
    let bytes = img.to_u8();
    let n = img.width * img.height;
    let dynamic = match img.channels {
        1 => DynamicImage::ImageLuma8(
            GrayImage::from_raw(w, h, bytes).expect("buffer length matches dimensions"),
        ),
        3 => {
            let mut interleaved = vec![0u8; 3 * n];
            for i in 0..n {
                for c in 0..3 {
                    interleaved[3 * i + c] = bytes[c * n + i];
                }
            }
            DynamicImage::ImageRgb8(
                RgbImage::from_raw(w, h, interleaved).expect("buffer length matches dimensions"),
            )
        }
        c => {
            return Err(Error::ImageWrite {
                path: path.to_owned(),
                reason: format!("cannot encode {c}-channel image as PNG"),
            })
        }
    };
    dynamic
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::ImageWrite {
            path: path.to_owned(),
            reason: e.to_string(),
        })
}

/// Deterministic i.i.d. Gaussian noise source (ChaCha20 stream seeded from
/// a `u64`, Ziggurat normal sampling).
pub fn gaussian_samples(len: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated by caller");
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

pub fn add_gaussian_noise(img: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be finite and non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let noise = gaussian_samples(img.len(), sigma, seed);
    let data = img.data.iter().zip(noise).map(|(v, e)| v + e).collect();
    img.with_data(data)
}

/// Mean squared error over every sample of every channel.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(255^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (PEAK * PEAK / err).log10()).min(PSNR_CAP_DB))
}
