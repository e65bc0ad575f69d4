//! PNG and binary PGM/PPM reading and writing.
//!
//! Samples are mapped to `[0, 1]` by dividing by the largest sample value
//! of the bit depth. Saving clips to `[0, 1]` and rounds half up, so a load
//! after a save is within `1 / (2 · max)` of the clipped image. An alpha
//! channel is dropped on load.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::image::{Image, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
pub enum BitDepth {
    #[serde(rename = "8")]
    Eight,
    #[default]
    #[serde(rename = "16")]
    Sixteen,
}

impl BitDepth {
    pub fn max_sample(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(BitDepth::Eight),
            16 => Some(BitDepth::Sixteen),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Container {
    Png,
    Pnm,
}

fn container(path: &Path) -> Result<Container> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => Ok(Container::Png),
        Some("pgm" | "ppm" | "pnm") => Ok(Container::Pnm),
        _ => Err(Error::format(
            path,
            "unsupported extension (expected .png, .pgm, .ppm or .pnm)",
        )),
    }
}

/// Quantizes one sample: clip to `[0, 1]`, scale, round half up.
pub fn quantize(value: f64, depth: BitDepth) -> u16 {
    let max = depth.max_sample();
    (value.clamp(0.0, 1.0) * max + 0.5).floor().min(max) as u16
}

pub fn load(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    container(path)?;
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let dynamic = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match dynamic {
        DynamicImage::ImageLuma8(b) => (1, scale(b.as_raw(), 255.0)),
        DynamicImage::ImageLumaA8(_) => (1, scale(dynamic.to_luma8().as_raw(), 255.0)),
        DynamicImage::ImageRgb8(b) => (3, scale(b.as_raw(), 255.0)),
        DynamicImage::ImageRgba8(_) => (3, scale(dynamic.to_rgb8().as_raw(), 255.0)),
        DynamicImage::ImageLuma16(b) => (1, scale(b.as_raw(), 65535.0)),
        DynamicImage::ImageLumaA16(_) => (1, scale(dynamic.to_luma16().as_raw(), 65535.0)),
        DynamicImage::ImageRgb16(b) => (3, scale(b.as_raw(), 65535.0)),
        DynamicImage::ImageRgba16(_) => (3, scale(dynamic.to_rgb16().as_raw(), 65535.0)),
        other => {
            return Err(Error::format(
                path,
                format!("unsupported sample type {:?}", other.color()),
            ))
        }
    };
    Image::new(Shape::new(h, w, channels), data).map_err(|e| Error::format(path, e.to_string()))
}

fn scale<T: Copy + Into<f64>>(raw: &[T], max: f64) -> Vec<f64> {
    raw.iter().map(|&v| v.into() / max).collect()
}

pub fn save(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let kind = container(path)?;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let color = match (img.channels(), depth) {
        (1, BitDepth::Eight) => ExtendedColorType::L8,
        (1, BitDepth::Sixteen) => ExtendedColorType::L16,
        (3, BitDepth::Eight) => ExtendedColorType::Rgb8,
        (3, BitDepth::Sixteen) => ExtendedColorType::Rgb16,
        (c, _) => return Err(Error::format(path, format!("cannot store {c} channels"))),
    };
    let bytes: Vec<u8> = match depth {
        BitDepth::Eight => img.data().iter().map(|&v| quantize(v, depth) as u8).collect(),
        // The PNG encoder takes 16-bit samples in native byte order.
        BitDepth::Sixteen => img
            .data()
            .iter()
            .flat_map(|&v| quantize(v, depth).to_ne_bytes())
            .collect(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match kind {
        Container::Png => PngEncoder::new(out)
            .write_image(&bytes, w, h, color)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::format(path, other.to_string()),
            }),
        Container::Pnm => write_pnm(&mut out, img, depth).map_err(|e| Error::io(path, e)),
    }
}

/// Binary P5/P6 with big-endian samples at 16 bits.
fn write_pnm(out: &mut impl Write, img: &Image, depth: BitDepth) -> std::io::Result<()> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    write!(out, "{magic}\n{} {}\n{}\n", img.width(), img.height(), depth.max_sample())?;
    for &v in img.data() {
        let q = quantize(v, depth);
        match depth {
            BitDepth::Eight => out.write_all(&[q as u8])?,
            BitDepth::Sixteen => out.write_all(&q.to_be_bytes())?,
        }
    }
    out.flush()
}
