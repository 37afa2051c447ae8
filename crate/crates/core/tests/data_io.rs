mod common;

use std::fs;

use bam::data::{batches, load_split, write_fixture, write_records, BatchOptions, Dataset, ImageSet, Normalization, Record, Split};
use bam::Error;

#[test]
fn cifar10_file_decodes_and_reencodes_byte_exact() {
    let (_guard, dir) = common::cifar10_dir();
    let raw = fs::read(dir.join("test_batch.bin"))
        .or_else(|_| fs::read(dir.join("cifar-10-batches-bin/test_batch.bin")))
        .unwrap();
    let records: Vec<Record> = load_split(&dir, Dataset::Cifar10, Split::Test)
        .unwrap()
        .map(Result::unwrap)
        .collect();
    assert_eq!(records.len(), 10_000);
    let rebuilt: Vec<u8> = records.iter().flat_map(|r| r.encode(Dataset::Cifar10)).collect();
    assert!(rebuilt == raw);
}

#[test]
fn cifar100_records_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<Record> = (0..50u8)
        .map(|i| Record {
            coarse: Some(i % 20),
            label: i * 2 % 100,
            pixels: (0..3072).map(|p| (p as u8).wrapping_mul(i)).collect(),
        })
        .collect();
    let path = dir.path().join("small.bin");
    write_records(&path, Dataset::Cifar100, &records).unwrap();
    let raw = fs::read(&path).unwrap();
    assert_eq!(raw.len(), 50 * 3074);
    for (chunk, r) in raw.chunks(3074).zip(&records) {
        assert_eq!(&Record::decode(chunk, Dataset::Cifar100).unwrap(), r);
        assert_eq!(r.encode(Dataset::Cifar100), chunk);
    }
}

#[test]
fn every_training_file_must_have_exact_size() {
    let (guard, dir) = common::cifar10_dir();
    if guard.is_none() {
        return;
    }
    ImageSet::load(&dir, Dataset::Cifar10, Split::Train, Some(10)).unwrap();
    let victim = dir.join("data_batch_4.bin");
    let bytes = fs::read(&victim).unwrap();
    fs::remove_file(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 1]).unwrap();
    let err = ImageSet::load(&dir, Dataset::Cifar10, Split::Train, Some(10)).unwrap_err();
    match &err {
        Error::FileSize { path, expected, actual } => {
            assert!(path.ends_with("data_batch_4.bin"));
            assert_eq!((*expected, *actual), (30_730_000, 30_729_999));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(err.exit_code(), 3);
    fs::remove_file(&victim).unwrap();
    assert!(matches!(
        load_split(&dir, Dataset::Cifar10, Split::Train),
        Err(Error::Format { .. })
    ));
}

#[test]
fn out_of_range_label_names_record() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), Dataset::Cifar10, 0).unwrap();
    let path = dir.path().join("test_batch.bin");
    let mut bytes = fs::read(&path).unwrap();
    bytes[3073 * 17] = 10;
    fs::write(&path, bytes).unwrap();
    let err = load_split(dir.path(), Dataset::Cifar10, Split::Test)
        .unwrap()
        .find_map(Result::err)
        .unwrap();
    match &err {
        Error::CorruptRecord { index, .. } => assert_eq!(*index, 17),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(err.exit_code(), 3);
    assert!(Record::decode(&[25u8; 3074], Dataset::Cifar100).is_err());
    assert!(Record::decode(&[3u8; 3074], Dataset::Cifar100).is_ok());
}

#[test]
fn batching_is_seeded() {
    let set = bam::data::synthetic_classes(40, 10, 2);
    let norm = Normalization::compute(&set).unwrap();
    let opts = |seed| BatchOptions {
        batch_size: 16,
        shuffle: Some(seed),
        augment: true,
    };
    let collect = |seed| batches(&set, &norm, opts(seed)).unwrap().collect::<Vec<_>>();
    let (a, b, c) = (collect(1), collect(1), collect(2));
    assert_eq!(a.iter().map(|b| b.labels.len()).collect::<Vec<_>>(), [16, 16, 8]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mut seen: Vec<usize> = a.iter().flat_map(|b| b.labels.clone()).collect();
    seen.sort();
    let mut all = set.labels.clone();
    all.sort();
    assert_eq!(seen, all);
}

#[test]
fn normalization_cache_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let set = bam::data::synthetic_classes(30, 3, 9);
    let path = dir.path().join("norm.txt");
    let first = Normalization::cached(&path, &set).unwrap();
    assert!(path.exists());
    let again = Normalization::cached(&path, &bam::data::synthetic_classes(30, 3, 10)).unwrap();
    assert_eq!(first, again);
}
