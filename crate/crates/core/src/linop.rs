//! Linear degradation operators: periodic convolution, decimation and
//! their composition, each with an exact adjoint.

use std::fmt::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::image::{Image, Shape};

/// Square, odd-sized convolution kernel stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::param(format!("kernel size must be odd and positive, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::shape(format!(
                "{} weights for a {size}x{size} kernel",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::param("kernel weights must be finite"));
        }
        Ok(Kernel { size, weights })
    }

    pub fn delta() -> Self {
        Kernel {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn center(&self) -> usize {
        (self.size - 1) / 2
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Kernel rotated by 180 degrees.
    pub fn flipped(&self) -> Kernel {
        let mut weights = self.weights.clone();
        weights.reverse();
        Kernel {
            size: self.size,
            weights,
        }
    }

    /// Plain-text grid: the size on the first line, then one row of
    /// whitespace-separated weights per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.size);
        for row in self.weights.chunks(self.size) {
            let line: Vec<String> = row.iter().map(|w| format!("{w:e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let size: usize = lines
            .next()
            .ok_or_else(|| Error::param("empty kernel file"))?
            .parse()
            .map_err(|e| Error::param(format!("kernel size: {e}")))?;
        let mut weights = Vec::with_capacity(size * size);
        for (r, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::param(format!("kernel row {r}: {e}")))?;
            if row.len() != size {
                return Err(Error::shape(format!(
                    "kernel row {r} has {} entries, expected {size}",
                    row.len()
                )));
            }
            weights.extend(row);
        }
        Kernel::new(size, weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Kernel::from_text(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Isotropic Gaussian point spread function normalized to unit sum.
pub fn gaussian_psf(sigma: f64, size: usize) -> Result<Kernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("PSF sigma must be positive, got {sigma}")));
    }
    if size == 0 || size % 2 == 0 {
        return Err(Error::param(format!("PSF size must be odd and positive, got {size}")));
    }
    let c = ((size - 1) / 2) as f64;
    let denom = 2.0 * sigma * sigma;
    let mut weights: Vec<f64> = (0..size * size)
        .map(|idx| {
            let (i, j) = ((idx / size) as f64, (idx % size) as f64);
            (-((i - c).powi(2) + (j - c).powi(2)) / denom).exp()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Kernel::new(size, weights)
}

/// Smallest odd size >= `6 * sigma + 1`, capped at the largest odd size that
/// fits in `max_extent`.
pub fn default_psf_size(sigma: f64, max_extent: usize) -> usize {
    let mut size = (6.0 * sigma + 1.0).ceil() as usize;
    if size % 2 == 0 {
        size += 1;
    }
    let cap = if max_extent % 2 == 1 {
        max_extent
    } else {
        max_extent.saturating_sub(1)
    };
    size.min(cap.max(1))
}

/// DFT of `kernel` zero-padded to `height` x `width` with its center moved
/// to index `(0, 0)`. Multiplying by it in the Fourier domain is periodic
/// convolution with `kernel`.
pub fn transfer_function(kernel: &Kernel, height: usize, width: usize) -> Result<Vec<Complex64>> {
    if kernel.size() > height || kernel.size() > width {
        return Err(Error::shape(format!(
            "kernel of size {} does not fit a {height}x{width} grid",
            kernel.size()
        )));
    }
    let c = kernel.center() as isize;
    let mut padded = vec![Complex64::new(0.0, 0.0); height * width];
    for i in 0..kernel.size() {
        for j in 0..kernel.size() {
            let r = (i as isize - c).rem_euclid(height as isize) as usize;
            let col = (j as isize - c).rem_euclid(width as isize) as usize;
            padded[r * width + col] += kernel.weight(i, j);
        }
    }
    Fft2d::new(height, width).forward(&mut padded);
    Ok(padded)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinearOperator {
    Identity {
        shape: Shape,
    },
    /// Circular convolution on every channel.
    PeriodicConv {
        kernel: Kernel,
        shape: Shape,
    },
    /// Keeps rows and columns whose index is a multiple of `factor`;
    /// `shape` is the input (high resolution) shape.
    Decimate {
        factor: usize,
        shape: Shape,
    },
    /// `outer(inner(x))`.
    Compose {
        outer: Box<LinearOperator>,
        inner: Box<LinearOperator>,
    },
}

impl LinearOperator {
    pub fn identity(shape: Shape) -> Result<Self> {
        shape.validate()?;
        Ok(LinearOperator::Identity { shape })
    }

    pub fn conv(kernel: Kernel, shape: Shape) -> Result<Self> {
        shape.validate()?;
        if kernel.size() > shape.height || kernel.size() > shape.width {
            return Err(Error::shape(format!(
                "kernel of size {} larger than image {shape}",
                kernel.size()
            )));
        }
        Ok(LinearOperator::PeriodicConv { kernel, shape })
    }

    pub fn decimate(factor: usize, shape: Shape) -> Result<Self> {
        shape.validate()?;
        if factor == 0 {
            return Err(Error::param("decimation factor must be positive"));
        }
        if shape.height % factor != 0 || shape.width % factor != 0 {
            return Err(Error::shape(format!(
                "image {shape} not divisible by decimation factor {factor}"
            )));
        }
        Ok(LinearOperator::Decimate { factor, shape })
    }

    pub fn compose(outer: LinearOperator, inner: LinearOperator) -> Result<Self> {
        if inner.output_shape() != outer.input_shape() {
            return Err(Error::shape(format!(
                "cannot chain {} output into {} input",
                inner.output_shape(),
                outer.input_shape()
            )));
        }
        Ok(LinearOperator::Compose {
            outer: Box::new(outer),
            inner: Box::new(inner),
        })
    }

    /// Blur followed by decimation, the super-resolution forward model.
    pub fn blur_decimate(kernel: Kernel, factor: usize, shape: Shape) -> Result<Self> {
        let blur = LinearOperator::conv(kernel, shape)?;
        let dec = LinearOperator::decimate(factor, shape)?;
        LinearOperator::compose(dec, blur)
    }

    pub fn input_shape(&self) -> Shape {
        match self {
            LinearOperator::Identity { shape }
            | LinearOperator::PeriodicConv { shape, .. }
            | LinearOperator::Decimate { shape, .. } => *shape,
            LinearOperator::Compose { inner, .. } => inner.input_shape(),
        }
    }

    pub fn output_shape(&self) -> Shape {
        match self {
            LinearOperator::Identity { shape } | LinearOperator::PeriodicConv { shape, .. } => {
                *shape
            }
            LinearOperator::Decimate { factor, shape } => Shape::new(
                shape.height / factor,
                shape.width / factor,
                shape.channels,
            ),
            LinearOperator::Compose { outer, .. } => outer.output_shape(),
        }
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        check_shape("apply", self.input_shape(), x)?;
        Ok(self.apply_unchecked(x))
    }

    pub fn adjoint(&self, y: &Image) -> Result<Image> {
        check_shape("adjoint", self.output_shape(), y)?;
        Ok(self.adjoint_unchecked(y))
    }

    /// `A^T A x`.
    pub fn normal(&self, x: &Image) -> Result<Image> {
        let ax = self.apply(x)?;
        self.adjoint(&ax)
    }

    fn apply_unchecked(&self, x: &Image) -> Image {
        match self {
            LinearOperator::Identity { .. } => x.clone(),
            LinearOperator::PeriodicConv { kernel, shape } => {
                x.map_planes(shape.height, shape.width, |p| {
                    convolve_periodic(p, shape.height, shape.width, kernel, false)
                })
            }
            LinearOperator::Decimate { factor, .. } => {
                let d = *factor;
                Image::from_fn(self.output_shape(), |r, c, ch| x.get(r * d, c * d, ch))
            }
            LinearOperator::Compose { outer, inner } => {
                outer.apply_unchecked(&inner.apply_unchecked(x))
            }
        }
    }

    fn adjoint_unchecked(&self, y: &Image) -> Image {
        match self {
            LinearOperator::Identity { .. } => y.clone(),
            LinearOperator::PeriodicConv { kernel, shape } => {
                y.map_planes(shape.height, shape.width, |p| {
                    convolve_periodic(p, shape.height, shape.width, kernel, true)
                })
            }
            LinearOperator::Decimate { factor, shape } => {
                let mut out = Image::zeros(*shape);
                for r in 0..y.height() {
                    for c in 0..y.width() {
                        for ch in 0..y.channels() {
                            out.set(r * factor, c * factor, ch, y.get(r, c, ch));
                        }
                    }
                }
                out
            }
            LinearOperator::Compose { outer, inner } => {
                inner.adjoint_unchecked(&outer.adjoint_unchecked(y))
            }
        }
    }
}

fn check_shape(what: &str, expected: Shape, x: &Image) -> Result<()> {
    if x.shape() != expected {
        return Err(Error::shape(format!(
            "{what}: expected {expected}, got {}",
            x.shape()
        )));
    }
    Ok(())
}

/// Direct periodic convolution of one plane. With `transpose` set this is
/// correlation, i.e. convolution with the flipped kernel.
fn convolve_periodic(
    plane: &[f64],
    height: usize,
    width: usize,
    kernel: &Kernel,
    transpose: bool,
) -> Vec<f64> {
    let k = kernel.size();
    let c = kernel.center() as isize;
    let (h, w) = (height as isize, width as isize);
    let sign = if transpose { 1 } else { -1 };
    let mut out = vec![0.0; height * width];
    for r in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for i in 0..k {
                let rr = (r + sign * (i as isize - c)).rem_euclid(h) as usize;
                let row = &plane[rr * width..(rr + 1) * width];
                for j in 0..k {
                    let cc = (col + sign * (j as isize - c)).rem_euclid(w) as usize;
                    acc += kernel.weight(i, j) * row[cc];
                }
            }
            out[(r * w + col) as usize] = acc;
        }
    }
    out
}
