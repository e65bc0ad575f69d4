//! Real-valued image rasters and the pixel-level operations on them.
//!
//! Pixels are stored interleaved (`(row * width + col) * channels + channel`)
//! as `f64` with a nominal range of `[0, 1]`. Values outside that range are
//! allowed; clipping only happens when [`Image::clipped`] is called or an
//! image is written to disk.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn gray(height: usize, width: usize) -> Self {
        Shape::new(height, width, 1)
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::shape(format!("empty image {self}")));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::shape(format!(
                "unsupported channel count {} (expected 1 or 3)",
                self.channels
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from interleaved samples. Rejects length mismatches
    /// and non-finite samples.
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "{} samples supplied for a {shape} image",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite sample at index {pos}")));
        }
        Ok(Image { shape, data })
    }

    pub(crate) fn from_vec_unchecked(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Image { shape, data }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Image {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Image::filled(shape, 0.0)
    }

    /// `f(row, col, channel)` evaluated at every sample.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for r in 0..shape.height {
            for c in 0..shape.width {
                for ch in 0..shape.channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Image { shape, data }
    }

    /// Interleaves per-channel planes (each `height * width`, row-major).
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let shape = Shape::new(height, width, planes.len());
        shape.validate()?;
        if planes.iter().any(|p| p.len() != shape.plane_len()) {
            return Err(Error::shape("plane length does not match height * width"));
        }
        let mut data = vec![0.0; shape.len()];
        for (ch, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                data[i * shape.channels + ch] = *v;
            }
        }
        Ok(Image { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.shape.width + col) * self.shape.channels + channel]
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        let idx = (row * self.shape.width + col) * self.shape.channels + channel;
        self.data[idx] = value;
    }

    /// Copies one channel out as a row-major plane.
    pub fn plane(&self, channel: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(channel)
            .step_by(self.shape.channels)
            .copied()
            .collect()
    }

    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.shape.channels).map(|c| self.plane(c)).collect()
    }

    /// Applies `f` to every channel plane independently; `out_h` x `out_w`
    /// is the plane size `f` produces.
    pub(crate) fn map_planes(
        &self,
        out_h: usize,
        out_w: usize,
        mut f: impl FnMut(&[f64]) -> Vec<f64>,
    ) -> Image {
        let planes: Vec<Vec<f64>> = (0..self.channels()).map(|c| f(&self.plane(c))).collect();
        Image::from_planes(out_h, out_w, &planes).expect("plane sizes are produced internally")
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scaled(&self, factor: f64) -> Image {
        self.map(|v| v * factor)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            shape: self.shape,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.check_same_shape(other)?;
        Ok(Image {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn clipped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Nearest-neighbour upsampling: each pixel becomes a `factor` x `factor`
    /// block.
    pub fn upsample_replicate(&self, factor: usize) -> Image {
        let shape = Shape::new(
            self.height() * factor,
            self.width() * factor,
            self.channels(),
        );
        Image::from_fn(shape, |r, c, ch| self.get(r / factor, c / factor, ch))
    }

    /// Keeps the top-left `height` x `width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Image> {
        if height > self.height() || width > self.width() || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "cannot crop {} to {height}x{width}",
                self.shape
            )));
        }
        let shape = Shape::new(height, width, self.channels());
        Ok(Image::from_fn(shape, |r, c, ch| self.get(r, c, ch)))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean squared error over every sample of every channel.
pub fn mse(reference: &Image, test: &Image) -> Result<f64> {
    reference.check_same_shape(test)?;
    let sum: f64 = reference
        .data
        .iter()
        .zip(&test.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.data.len() as f64)
}

/// Peak signal-to-noise ratio in dB for a peak value of 1.0, averaged over
/// all channels. Identical images give `f64::INFINITY`.
pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    let err = mse(reference, test)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / err).log10())
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma`.
///
/// Samples are drawn from a ChaCha8 stream seeded with `seed`, in
/// interleaved sample order, so the result depends only on
/// `(x, sigma, seed)`. The output is not clipped.
pub fn awgn_corrupt(x: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(x.map(|v| {
        let n: f64 = StandardNormal.sample(&mut rng);
        v + sigma * n
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: Shape) -> Image {
        Image::from_fn(shape, |r, c, ch| {
            ((r * 7 + c * 3 + ch) % 11) as f64 / 11.0
        })
    }

    #[test]
    fn rejects_bad_lengths_and_nan() {
        let s = Shape::gray(2, 2);
        assert!(matches!(Image::new(s, vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(Image::new(s, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(Image::new(Shape::new(2, 2, 2), vec![0.0; 8]).is_err());
    }

    #[test]
    fn psnr_identity_is_infinite() {
        let x = ramp(Shape::new(4, 5, 3));
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_constant_offsets() {
        let x = ramp(Shape::gray(8, 8));
        let half = x.map(|v| v + 0.5);
        assert!((psnr(&x, &half).unwrap() - 6.020_599_913).abs() < 1e-6);
        let tenth = x.map(|v| v - 0.1);
        assert!((psnr(&x, &tenth).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_shape_mismatch() {
        let a = Image::zeros(Shape::gray(2, 2));
        let b = Image::zeros(Shape::gray(2, 3));
        assert!(matches!(psnr(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_sigma_is_bitwise_identity() {
        let x = ramp(Shape::new(6, 6, 3));
        assert_eq!(awgn_corrupt(&x, 0.0, 9).unwrap(), x);
    }

    #[test]
    fn noise_statistics() {
        let x = Image::filled(Shape::gray(64, 64), 0.3);
        let y = awgn_corrupt(&x, 0.1, 1234).unwrap();
        let diff = y.sub(&x).unwrap();
        let n = diff.data().len() as f64;
        let mean = diff.mean();
        let var = diff.data().iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!((0.09..=0.11).contains(&std), "std {std}");
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let x = ramp(Shape::gray(16, 16));
        let a = awgn_corrupt(&x, 0.05, 77).unwrap();
        let b = awgn_corrupt(&x, 0.05, 77).unwrap();
        let c = awgn_corrupt(&x, 0.05, 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn negative_sigma_rejected() {
        let x = ramp(Shape::gray(2, 2));
        assert!(awgn_corrupt(&x, -0.1, 0).is_err());
    }

    #[test]
    fn planes_roundtrip() {
        let x = ramp(Shape::new(3, 4, 3));
        let back = Image::from_planes(3, 4, &x.planes()).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn replicate_upsampling() {
        let x = Image::new(Shape::gray(1, 2), vec![0.25, 0.75]).unwrap();
        let up = x.upsample_replicate(2);
        assert_eq!(up.data(), &[0.25, 0.25, 0.75, 0.75, 0.25, 0.25, 0.75, 0.75]);
    }
}
