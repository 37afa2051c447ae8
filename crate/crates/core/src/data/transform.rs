use std::path::Path;

use rand::Rng as _;

use crate::data::cifar::IMAGE_SIDE;
use crate::data::ImageSet;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Zero padding added on each side before random cropping.
pub const CROP_PAD: usize = 4;

/// Per-channel statistics of pixel values scaled to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn compute(set: &ImageSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::Contract("normalization needs at least one image".into()));
        }
        let plane = IMAGE_SIDE * IMAGE_SIDE;
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        for img in set.pixels.chunks_exact(3 * plane) {
            for c in 0..3 {
                for &p in &img[c * plane..(c + 1) * plane] {
                    let v = p as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let n = (set.len() * plane) as f64;
        let mut out = Self::identity();
        for c in 0..3 {
            let mean = sum[c] / n;
            out.mean[c] = mean;
            out.std[c] = (sq[c] / n - mean * mean).max(0.0).sqrt().max(1e-8);
        }
        Ok(out)
    }

    /// Six lines: three means then three standard deviations.
    pub fn to_text(&self) -> String {
        self.mean.iter().chain(&self.std).map(|v| format!("{v}\n")).collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let values: Vec<f64> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: format!("bad normalization value: {e}"),
            })?;
        let [m0, m1, m2, s0, s1, s2] = values[..] else {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("expected 6 values, found {}", values.len()),
            });
        };
        Ok(Normalization {
            mean: [m0, m1, m2],
            std: [s0, s1, s2],
        })
    }

    /// Loads the cache at `path`, or computes it from `set` and writes it.
    pub fn cached(path: &Path, set: &ImageSet) -> Result<Self> {
        if path.exists() {
            return Self::parse(&std::fs::read_to_string(path)?, path);
        }
        let norm = Self::compute(set)?;
        std::fs::write(path, norm.to_text())?;
        Ok(norm)
    }

    /// Maps one image's bytes to normalized floats.
    pub fn apply(&self, pixels: &[u8], out: &mut [f32]) {
        let plane = IMAGE_SIDE * IMAGE_SIDE;
        for c in 0..3 {
            let (m, s) = (self.mean[c], self.std[c]);
            for (o, &p) in out[c * plane..(c + 1) * plane].iter_mut().zip(&pixels[c * plane..(c + 1) * plane]) {
                *o = ((p as f64 / 255.0 - m) / s) as f32;
            }
        }
    }
}

/// Crop window offset `(dy, dx)` into the padded image and flip flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        dy: CROP_PAD,
        dx: CROP_PAD,
        flip: false,
    };

    pub fn sample(rng: &mut Rng) -> Self {
        Augmentation {
            dy: rng.random_range(0..=2 * CROP_PAD),
            dx: rng.random_range(0..=2 * CROP_PAD),
            flip: rng.random_bool(0.5),
        }
    }

    /// Applies the crop and the flip to one `[3, 32, 32]` image.
    pub fn apply(&self, img: &[f32]) -> Vec<f32> {
        let side = IMAGE_SIDE;
        let mut out = vec![0f32; img.len()];
        for c in 0..3 {
            let src = &img[c * side * side..(c + 1) * side * side];
            let dst = &mut out[c * side * side..(c + 1) * side * side];
            for y in 0..side {
                let sy = (y + self.dy).checked_sub(CROP_PAD).filter(|&v| v < side);
                let Some(sy) = sy else { continue };
                for x in 0..side {
                    let tx = if self.flip { side - 1 - x } else { x };
                    if let Some(sx) = (tx + self.dx).checked_sub(CROP_PAD).filter(|&v| v < side) {
                        dst[y * side + x] = src[sy * side + sx];
                    }
                }
            }
        }
        out
    }
}

/// Random 4-pixel-padded crop followed by a horizontal flip with
/// probability one half.
pub fn augment(img: &[f32], rng: &mut Rng) -> Vec<f32> {
    Augmentation::sample(rng).apply(img)
}
