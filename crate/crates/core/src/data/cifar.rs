use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_BYTES: usize = 3 * IMAGE_SIDE * IMAGE_SIDE;
pub const RECORDS_PER_FILE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dataset {
    Cifar10,
    Cifar100,
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::Cifar10 => "cifar10",
            Dataset::Cifar100 => "cifar100",
        })
    }
}

impl FromStr for Dataset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10" => Ok(Dataset::Cifar10),
            "cifar100" => Ok(Dataset::Cifar100),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Dataset {
    pub fn num_classes(self) -> usize {
        match self {
            Dataset::Cifar10 => 10,
            Dataset::Cifar100 => 100,
        }
    }

    /// Label bytes preceding the pixels of each record.
    pub fn label_bytes(self) -> usize {
        match self {
            Dataset::Cifar10 => 1,
            Dataset::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + IMAGE_BYTES
    }

    /// Files making up a split, with their record counts.
    pub fn files(self, split: Split) -> Vec<(&'static str, usize)> {
        match (self, split) {
            (Dataset::Cifar10, Split::Train) => [
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ]
            .into_iter()
            .map(|f| (f, RECORDS_PER_FILE))
            .collect(),
            (Dataset::Cifar10, Split::Test) => vec![("test_batch.bin", RECORDS_PER_FILE)],
            (Dataset::Cifar100, Split::Train) => vec![("train.bin", 5 * RECORDS_PER_FILE)],
            (Dataset::Cifar100, Split::Test) => vec![("test.bin", RECORDS_PER_FILE)],
        }
    }
}

/// One decoded image. Pixels are the red, green and blue planes, each
/// 32x32 row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    /// Superclass label, present for CIFAR-100 only.
    pub coarse: Option<u8>,
    pub label: u8,
    pub pixels: Vec<u8>,
}

impl Record {
    pub fn decode(bytes: &[u8], dataset: Dataset) -> std::result::Result<Self, String> {
        if bytes.len() != dataset.record_len() {
            return Err(format!("record has {} bytes, expected {}", bytes.len(), dataset.record_len()));
        }
        let (coarse, label) = match dataset {
            Dataset::Cifar10 => (None, bytes[0]),
            Dataset::Cifar100 => {
                if bytes[0] >= 20 {
                    return Err(format!("coarse label {} out of range", bytes[0]));
                }
                (Some(bytes[0]), bytes[1])
            }
        };
        if label as usize >= dataset.num_classes() {
            return Err(format!("label {label} out of range for {dataset}"));
        }
        Ok(Record {
            coarse,
            label,
            pixels: bytes[dataset.label_bytes()..].to_vec(),
        })
    }

    pub fn encode(&self, dataset: Dataset) -> Vec<u8> {
        let mut out = Vec::with_capacity(dataset.record_len());
        if dataset == Dataset::Cifar100 {
            out.push(self.coarse.unwrap_or(0));
        }
        out.push(self.label);
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Streaming reader over one or more record files.
pub struct RecordStream {
    dataset: Dataset,
    files: Vec<PathBuf>,
    current: Option<(PathBuf, BufReader<File>)>,
    index: usize,
    buf: Vec<u8>,
    remaining: usize,
}

impl RecordStream {
    pub fn dataset(&self) -> Dataset {
        self.dataset
    }

    /// Records not yet yielded.
    pub fn remaining(&self) -> usize {
        self.remaining
    }
}

impl Iterator for RecordStream {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.current.is_none() {
                if self.files.is_empty() {
                    return None;
                }
                let path = self.files.remove(0);
                match File::open(&path) {
                    Ok(f) => self.current = Some((path, BufReader::new(f))),
                    Err(e) => return Some(Err(e.into())),
                }
                self.index = 0;
            }
            let (path, reader) = self.current.as_mut().expect("open file");
            match reader.read_exact(&mut self.buf) {
                Ok(()) => {
                    let index = self.index;
                    self.index += 1;
                    self.remaining = self.remaining.saturating_sub(1);
                    return Some(Record::decode(&self.buf, self.dataset).map_err(|message| Error::CorruptRecord {
                        path: path.clone(),
                        index,
                        message,
                    }));
                }
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => self.current = None,
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

fn resolve_dir(dir: &Path, dataset: Dataset, split: Split) -> PathBuf {
    let first = dataset.files(split)[0].0;
    if dir.join(first).exists() {
        return dir.to_path_buf();
    }
    let nested = dir.join(match dataset {
        Dataset::Cifar10 => "cifar-10-batches-bin",
        Dataset::Cifar100 => "cifar-100-binary",
    });
    if nested.join(first).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Opens a split after checking every file's exact byte length.
pub fn load_split(dir: &Path, dataset: Dataset, split: Split) -> Result<RecordStream> {
    let dir = resolve_dir(dir, dataset, split);
    let mut files = Vec::new();
    let mut total = 0;
    for (name, records) in dataset.files(split) {
        let path = dir.join(name);
        let actual = std::fs::metadata(&path)
            .map_err(|e| Error::Format {
                path: path.clone(),
                message: format!("cannot read file: {e}"),
            })?
            .len();
        let expected = (records * dataset.record_len()) as u64;
        if actual != expected {
            return Err(Error::FileSize { path, expected, actual });
        }
        files.push(path);
        total += records;
    }
    Ok(RecordStream {
        dataset,
        files,
        current: None,
        index: 0,
        buf: vec![0; dataset.record_len()],
        remaining: total,
    })
}

/// Writes records back to disk in the binary layout.
pub fn write_records<'a>(path: &Path, dataset: Dataset, records: impl IntoIterator<Item = &'a Record>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        w.write_all(&r.encode(dataset))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a complete directory in the binary layout of `dataset`, filled
/// with [`synthetic_classes`](crate::data::synthetic_classes) images. The
/// training files of CIFAR-10 share their content.
pub fn write_fixture(dir: &Path, dataset: Dataset, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (split, offset) in [(Split::Train, 0), (Split::Test, 1)] {
        let mut first: Option<PathBuf> = None;
        for (name, count) in dataset.files(split) {
            let path = dir.join(name);
            if let Some(src) = &first {
                if std::fs::hard_link(src, &path).is_err() {
                    std::fs::copy(src, &path)?;
                }
                continue;
            }
            let set = crate::data::synthetic_classes(count, dataset.num_classes(), seed.wrapping_add(offset));
            let records: Vec<Record> = set
                .records()
                .map(|mut r| {
                    if dataset == Dataset::Cifar100 {
                        r.coarse = Some(r.label / 5);
                    }
                    r
                })
                .collect();
            write_records(&path, dataset, &records)?;
            first = Some(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_ranges() {
        let mut bytes = vec![0u8; Dataset::Cifar100.record_len()];
        bytes[0] = 19;
        bytes[1] = 99;
        let r = Record::decode(&bytes, Dataset::Cifar100).unwrap();
        assert_eq!((r.coarse, r.label), (Some(19), 99));
        bytes[1] = 100;
        assert!(Record::decode(&bytes, Dataset::Cifar100).is_err());
        let mut bytes = vec![7u8; Dataset::Cifar10.record_len()];
        assert_eq!(Record::decode(&bytes, Dataset::Cifar10).unwrap().label, 7);
        bytes[0] = 10;
        assert!(Record::decode(&bytes, Dataset::Cifar10).is_err());
    }

    #[test]
    fn truncated_file_reports_sizes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("test_batch.bin"), vec![0u8; 3073 * 10]).unwrap();
        match load_split(dir.path(), Dataset::Cifar10, Split::Test) {
            Err(Error::FileSize { expected, actual, .. }) => {
                assert_eq!(expected, 30_730_000);
                assert_eq!(actual, 30_730);
            }
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }
}
