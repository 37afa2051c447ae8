//! CIFAR ingestion, augmentation and deterministic batching.

pub mod cifar;
mod synthetic;
mod transform;

use rand::seq::SliceRandom;

pub use cifar::{load_split, write_fixture, write_records, Dataset, Record, RecordStream, Split, IMAGE_BYTES, IMAGE_SIDE};
pub use synthetic::{synthetic_blobs, synthetic_classes};
pub use transform::{augment, Augmentation, Normalization, CROP_PAD};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Decoded images held in memory as raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    /// `len() * IMAGE_BYTES` bytes, one plane-major image after another.
    pub pixels: Vec<u8>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl ImageSet {
    pub fn from_records(records: impl IntoIterator<Item = Result<Record>>, num_classes: usize) -> Result<Self> {
        let mut set = ImageSet {
            pixels: Vec::new(),
            labels: Vec::new(),
            num_classes,
        };
        for r in records {
            let r = r?;
            set.pixels.extend_from_slice(&r.pixels);
            set.labels.push(r.label as usize);
        }
        Ok(set)
    }

    /// Reads a whole split, keeping at most `limit` records.
    pub fn load(dir: &std::path::Path, dataset: Dataset, split: Split, limit: Option<usize>) -> Result<Self> {
        let stream = load_split(dir, dataset, split)?;
        let n = limit.unwrap_or(usize::MAX);
        Self::from_records(stream.take(n), dataset.num_classes())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }

    pub fn records(&self) -> impl Iterator<Item = Record> + '_ {
        (0..self.len()).map(|i| Record {
            coarse: None,
            label: self.labels[i] as u8,
            pixels: self.image(i).to_vec(),
        })
    }

    /// The first `n` images.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        ImageSet {
            pixels: self.pixels[..n * IMAGE_BYTES].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }
}

/// Normalized images `[N, 3, 32, 32]` with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub batch_size: usize,
    /// Shuffle with this seed; `None` keeps the stored order.
    pub shuffle: Option<u64>,
    /// Random crop and flip, drawn from a stream of the shuffle seed.
    pub augment: bool,
}

/// Permutation of `0..n` determined by `seed`.
pub fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, 0));
    order
}

pub struct Batches<'a> {
    set: &'a ImageSet,
    norm: Normalization,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    augment: Option<rng::Rng>,
}

impl Iterator for Batches<'_> {
    type Item = ImageBatch;

    fn next(&mut self) -> Option<ImageBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let idx = &self.order[self.pos..(self.pos + self.batch_size).min(self.order.len())];
        self.pos += idx.len();
        let mut data = vec![0f32; idx.len() * IMAGE_BYTES];
        let mut labels = Vec::with_capacity(idx.len());
        for (slot, &i) in data.chunks_exact_mut(IMAGE_BYTES).zip(idx) {
            self.norm.apply(self.set.image(i), slot);
            if let Some(r) = self.augment.as_mut() {
                let out = augment(slot, r);
                slot.copy_from_slice(&out);
            }
            labels.push(self.set.labels[i]);
        }
        let images = Tensor::new([idx.len(), 3, IMAGE_SIDE, IMAGE_SIDE], data).expect("batch shape");
        Some(ImageBatch { images, labels })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

/// Batches over `set`; the final partial batch is kept.
pub fn batches<'a>(set: &'a ImageSet, norm: &Normalization, options: BatchOptions) -> Result<Batches<'a>> {
    if options.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let seed = options.shuffle.unwrap_or(0);
    let order = match options.shuffle {
        Some(seed) => shuffled_order(set.len(), seed),
        None => (0..set.len()).collect(),
    };
    Ok(Batches {
        set,
        norm: *norm,
        order,
        pos: 0,
        batch_size: options.batch_size,
        augment: options.augment.then(|| rng::substream(seed, 1)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_the_set_in_seeded_order() {
        let set = synthetic_blobs(70, 1);
        let norm = Normalization::compute(&set).unwrap();
        let opts = BatchOptions {
            batch_size: 32,
            shuffle: Some(5),
            augment: true,
        };
        let a: Vec<_> = batches(&set, &norm, opts).unwrap().collect();
        let b: Vec<_> = batches(&set, &norm, opts).unwrap().collect();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|b| b.labels.len()).collect::<Vec<_>>(), [32, 32, 6]);
        assert!(batches(&set, &norm, BatchOptions { batch_size: 0, ..opts }).is_err());
    }

    #[test]
    fn seeds_give_distinct_permutations() {
        let a = shuffled_order(50_000, 1);
        let b = shuffled_order(50_000, 2);
        assert_ne!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50_000).collect::<Vec<_>>());
    }

    #[test]
    fn normalized_training_set_is_standardized() {
        let set = synthetic_blobs(256, 4);
        let norm = Normalization::compute(&set).unwrap();
        let opts = BatchOptions {
            batch_size: 256,
            shuffle: None,
            augment: false,
        };
        let batch = batches(&set, &norm, opts).unwrap().next().unwrap();
        let plane = 32 * 32;
        for c in 0..3 {
            let vals: Vec<f64> = batch
                .images
                .data()
                .chunks_exact(3 * plane)
                .flat_map(|img| img[c * plane..(c + 1) * plane].iter().map(|&v| v as f64))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-3, "{mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-3, "{var}");
        }
    }
}
