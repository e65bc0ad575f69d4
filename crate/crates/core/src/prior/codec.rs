//! Encoder/decoder pairs between images and flat latent vectors.
//!
//! The block transform applies an orthonormal 2-D DCT-II to each
//! `block x block` tile of every channel and keeps the `keep x keep`
//! lowest-frequency coefficients. Encoding after decoding is the identity
//! on latents, decoding after encoding is the orthogonal projection onto
//! the span of the kept basis images, and the encoder is the adjoint of the
//! decoder.

use crate::error::{Error, Result};
use crate::image::{Image, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodecKind {
    Identity,
    BlockTransform { block: usize, keep: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    kind: CodecKind,
    shape: Shape,
    basis: Vec<f64>,
}

impl Codec {
    pub fn identity(shape: Shape) -> Result<Self> {
        shape.validate()?;
        Ok(Codec {
            kind: CodecKind::Identity,
            shape,
            basis: Vec::new(),
        })
    }

    pub fn block_transform(shape: Shape, block: usize, keep: usize) -> Result<Self> {
        shape.validate()?;
        if block == 0 || keep == 0 || keep > block {
            return Err(Error::param(format!(
                "block transform needs 0 < keep <= block, got block {block}, keep {keep}"
            )));
        }
        if shape.height % block != 0 || shape.width % block != 0 {
            return Err(Error::shape(format!(
                "image {shape} is not tiled by {block}x{block} blocks"
            )));
        }
        Ok(Codec {
            kind: CodecKind::BlockTransform { block, keep },
            shape,
            basis: dct_matrix(block),
        })
    }

    pub fn new(kind: CodecKind, shape: Shape) -> Result<Self> {
        match kind {
            CodecKind::Identity => Codec::identity(shape),
            CodecKind::BlockTransform { block, keep } => Codec::block_transform(shape, block, keep),
        }
    }

    pub fn kind(&self) -> CodecKind {
        self.kind
    }

    pub fn image_shape(&self) -> Shape {
        self.shape
    }

    pub fn latent_len(&self) -> usize {
        match self.kind {
            CodecKind::Identity => self.shape.len(),
            CodecKind::BlockTransform { block, keep } => {
                let tiles = (self.shape.height / block) * (self.shape.width / block);
                tiles * keep * keep * self.shape.channels
            }
        }
    }

    /// Size of the contiguous latent groups that belong to one image tile
    /// (one channel of one block). The identity codec is a single group.
    pub fn group_len(&self) -> usize {
        match self.kind {
            CodecKind::Identity => self.latent_len(),
            CodecKind::BlockTransform { keep, .. } => keep * keep,
        }
    }

    pub fn encode(&self, x: &Image) -> Result<Vec<f64>> {
        if x.shape() != self.shape {
            return Err(Error::shape(format!(
                "codec built for {}, got {}",
                self.shape,
                x.shape()
            )));
        }
        Ok(match self.kind {
            CodecKind::Identity => x.data().to_vec(),
            CodecKind::BlockTransform { block, keep } => self.encode_blocks(x, block, keep),
        })
    }

    pub fn decode(&self, z: &[f64]) -> Result<Image> {
        if z.len() != self.latent_len() {
            return Err(Error::shape(format!(
                "latent of length {} for a codec expecting {}",
                z.len(),
                self.latent_len()
            )));
        }
        Ok(match self.kind {
            CodecKind::Identity => Image::from_vec_unchecked(self.shape, z.to_vec()),
            CodecKind::BlockTransform { block, keep } => self.decode_blocks(z, block, keep),
        })
    }

    /// `Dᵀ w`. Both codecs are orthonormal, so this is the encoder.
    pub fn decode_adjoint(&self, w: &Image) -> Result<Vec<f64>> {
        self.encode(w)
    }

    fn encode_blocks(&self, x: &Image, block: usize, keep: usize) -> Vec<f64> {
        let (bh, bw) = (self.shape.height / block, self.shape.width / block);
        let mut out = Vec::with_capacity(self.latent_len());
        let mut tile = vec![0.0; block * block];
        let mut tmp = vec![0.0; keep * block];
        for ch in 0..self.shape.channels {
            for br in 0..bh {
                for bc in 0..bw {
                    for r in 0..block {
                        for c in 0..block {
                            tile[r * block + c] = x.get(br * block + r, bc * block + c, ch);
                        }
                    }
                    // tmp = C[:keep] · tile
                    for u in 0..keep {
                        for c in 0..block {
                            let mut acc = 0.0;
                            for r in 0..block {
                                acc += self.basis[u * block + r] * tile[r * block + c];
                            }
                            tmp[u * block + c] = acc;
                        }
                    }
                    // coef = tmp · C[:keep]ᵀ
                    for u in 0..keep {
                        for v in 0..keep {
                            let mut acc = 0.0;
                            for c in 0..block {
                                acc += tmp[u * block + c] * self.basis[v * block + c];
                            }
                            out.push(acc);
                        }
                    }
                }
            }
        }
        out
    }

    fn decode_blocks(&self, z: &[f64], block: usize, keep: usize) -> Image {
        let (bh, bw) = (self.shape.height / block, self.shape.width / block);
        let mut img = Image::zeros(self.shape);
        let mut tmp = vec![0.0; block * keep];
        let group = keep * keep;
        let mut idx = 0;
        for ch in 0..self.shape.channels {
            for br in 0..bh {
                for bc in 0..bw {
                    let coef = &z[idx..idx + group];
                    idx += group;
                    // tmp = C[:keep]ᵀ · coef   (block x keep)
                    for r in 0..block {
                        for v in 0..keep {
                            let mut acc = 0.0;
                            for u in 0..keep {
                                acc += self.basis[u * block + r] * coef[u * keep + v];
                            }
                            tmp[r * keep + v] = acc;
                        }
                    }
                    // tile = tmp · C[:keep]
                    for r in 0..block {
                        for c in 0..block {
                            let mut acc = 0.0;
                            for v in 0..keep {
                                acc += tmp[r * keep + v] * self.basis[v * block + c];
                            }
                            img.set(br * block + r, bc * block + c, ch, acc);
                        }
                    }
                }
            }
        }
        img
    }
}

/// Orthonormal DCT-II matrix, row `u` holding basis vector `u`.
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for u in 0..n {
        let scale = if u == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for x in 0..n {
            m[u * n + x] = scale
                * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2 * n) as f64).cos();
        }
    }
    m
}
