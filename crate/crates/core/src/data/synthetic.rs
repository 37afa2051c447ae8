use rand::Rng as _;

use crate::data::cifar::{IMAGE_BYTES, IMAGE_SIDE};
use crate::data::ImageSet;
use crate::rng;

/// Blob colors per class, as RGB.
const PALETTE: [[f32; 3]; 2] = [[230.0, 70.0, 40.0], [40.0, 90.0, 230.0]];

/// Two-class images: a soft colored disc on a noisy gray background. Class
/// 0 discs are warm, class 1 discs are cool. Labels alternate, so any
/// prefix is balanced.
pub fn synthetic_blobs(n: usize, seed: u64) -> ImageSet {
    render(n, seed, 2, |label| PALETTE[label])
}

/// Like [`synthetic_blobs`] with `num_classes` disc hues spread around the
/// color wheel; label `i % num_classes` for image `i`.
pub fn synthetic_classes(n: usize, num_classes: usize, seed: u64) -> ImageSet {
    assert!(num_classes > 0, "at least one class");
    render(n, seed, num_classes, |label| hue(label as f32 / num_classes as f32))
}

/// Fully saturated RGB for a hue in `[0, 1)`.
fn hue(h: f32) -> [f32; 3] {
    let channel = |offset: f32| {
        let k = (h * 6.0 + offset) % 6.0;
        255.0 * (1.0 - (k.min(4.0 - k).clamp(0.0, 1.0)))
    };
    [channel(5.0), channel(3.0), channel(1.0)]
}

fn render(n: usize, seed: u64, num_classes: usize, color_of: impl Fn(usize) -> [f32; 3]) -> ImageSet {
    let mut r = rng::seeded(seed);
    let side = IMAGE_SIDE;
    let plane = side * side;
    let mut pixels = vec![0u8; n * IMAGE_BYTES];
    let mut labels = Vec::with_capacity(n);
    for (i, img) in pixels.chunks_exact_mut(IMAGE_BYTES).enumerate() {
        let label = i % num_classes;
        let cy = r.random_range(8.0..24.0f32);
        let cx = r.random_range(8.0..24.0f32);
        let radius = r.random_range(4.0..9.0f32);
        let background = r.random_range(90.0..150.0f32);
        let color = color_of(label);
        for y in 0..side {
            for x in 0..side {
                let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                let w = (-d2 / (2.0 * radius * radius)).exp();
                for c in 0..3 {
                    let noise = r.random_range(-20.0..20.0f32);
                    let v = background * (1.0 - w) + color[c] * w + noise;
                    img[c * plane + y * side + x] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        labels.push(label);
    }
    ImageSet {
        pixels,
        labels,
        num_classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_balanced() {
        let a = synthetic_blobs(10, 3);
        assert_eq!(a, synthetic_blobs(10, 3));
        assert_ne!(a, synthetic_blobs(10, 4));
        assert_eq!(a.labels.iter().filter(|&&l| l == 1).count(), 5);
    }

    #[test]
    fn hues_are_distinct() {
        assert_eq!(hue(0.0), [255.0, 0.0, 0.0]);
        assert_eq!(hue(1.0 / 3.0), [0.0, 255.0, 0.0]);
        assert_eq!(hue(2.0 / 3.0), [0.0, 0.0, 255.0]);
        let set = synthetic_classes(20, 10, 1);
        assert_eq!(set.num_classes, 10);
        assert_eq!(set.labels[13], 3);
    }
}
