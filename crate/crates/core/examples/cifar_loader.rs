//! Reads a CIFAR-10 directory in the binary layout, checks it end to end
//! and draws one augmented batch.
//!
//! Set `BAM_CIFAR10_DIR` to use real data; otherwise a synthetic directory
//! with the same layout is written to a temp dir.

use std::path::PathBuf;

use bam::data::{batches, load_split, write_fixture, BatchOptions, Dataset, ImageSet, Normalization, Split};

pub fn main() -> bam::Result<()> {
    let scratch = tempfile::tempdir()?;
    let dir = match std::env::var_os("BAM_CIFAR10_DIR") {
        Some(d) => PathBuf::from(d),
        None => {
            write_fixture(scratch.path(), Dataset::Cifar10, 7)?;
            scratch.path().to_path_buf()
        }
    };

    let mut counts = [0usize; 10];
    let mut stream = load_split(&dir, Dataset::Cifar10, Split::Test)?;
    println!("test split: {} records", stream.remaining());
    let first = stream.next().transpose()?.expect("non-empty split");
    for r in std::iter::once(Ok(first.clone())).chain(stream) {
        counts[r?.label as usize] += 1;
    }
    println!("labels per class: {counts:?}");
    let bytes = first.encode(Dataset::Cifar10);
    println!(
        "first record: label {}, {} bytes, re-encodes exactly: {}",
        first.label,
        bytes.len(),
        bam::data::Record::decode(&bytes, Dataset::Cifar10).as_ref() == Ok(&first)
    );

    let train = ImageSet::load(&dir, Dataset::Cifar10, Split::Train, Some(5000))?;
    let norm = Normalization::compute(&train)?;
    println!("normalization over {} training images:\n{}", train.len(), norm.to_text());
    let options = BatchOptions {
        batch_size: 128,
        shuffle: Some(0),
        augment: true,
    };
    let batch = batches(&train, &norm, options)?.next().expect("one batch");
    println!("batch images {:?}, first labels {:?}", batch.images.dims(), &batch.labels[..8]);
    Ok(())
}
