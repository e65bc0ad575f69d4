//! Seeded synthetic test images: a smooth background with a few flat or
//! gently shaded ellipses and rectangles on top.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{Image, Shape};

#[derive(Debug, Clone, Copy)]
enum Region {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, angle: f64 },
    Rect { top: f64, left: f64, bottom: f64, right: f64 },
}

impl Region {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Region::Ellipse { cy, cx, ry, rx, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Region::Rect { top, left, bottom, right } => {
                (top..=bottom).contains(&y) && (left..=right).contains(&x)
            }
        }
    }
}

/// Piecewise-smooth image with values in `[0.05, 0.95]`; the same
/// `(shape, seed)` always gives the same image.
pub fn piecewise_smooth(shape: Shape, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..shape.channels).map(|_| rng.random_range(0.2..0.5)).collect();
    let slope = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let count = rng.random_range(3..=6);
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let region = if rng.random_bool(0.6) {
            Region::Ellipse {
                cy: rng.random_range(0.1..0.9),
                cx: rng.random_range(0.1..0.9),
                ry: rng.random_range(0.08..0.35),
                rx: rng.random_range(0.08..0.35),
                angle: rng.random_range(0.0..std::f64::consts::PI),
            }
        } else {
            let (top, left) = (rng.random_range(0.0..0.7), rng.random_range(0.0..0.7));
            Region::Rect {
                top,
                left,
                bottom: top + rng.random_range(0.1..0.4),
                right: left + rng.random_range(0.1..0.4),
            }
        };
        let level: Vec<f64> = (0..shape.channels).map(|_| rng.random_range(-0.4..0.45)).collect();
        let shade = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
        shapes.push((region, level, shade));
    }
    let (h, w) = (shape.height as f64, shape.width as f64);
    Image::from_fn(shape, |r, c, ch| {
        let (y, x) = ((r as f64 + 0.5) / h, (c as f64 + 0.5) / w);
        let mut v = base[ch] + slope.0 * (y - 0.5) + slope.1 * (x - 0.5);
        for (region, level, shade) in &shapes {
            if region.contains(y, x) {
                v += level[ch] + shade.0 * (y - 0.5) + shade.1 * (x - 0.5);
            }
        }
        v.clamp(0.05, 0.95)
    })
}
