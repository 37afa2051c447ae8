//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BAMCKPT1"  u32 entry count
//! per entry:  u16 name length, UTF-8 name, u8 rank, rank x u32 extents,
//!             product(extents) x f32
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"BAMCKPT1";

/// Entries whose names start with this prefix carry training state rather
/// than model parameters.
pub const STATE_PREFIX: &str = "state.";

pub fn encode(entries: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(entries.len()).map_err(|_| Error::Contract("too many checkpoint entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::Contract(format!("parameter name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Contract(format!("rank too large for {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.dims() {
            let d = u32::try_from(d).map_err(|_| Error::Contract(format!("extent too large for {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format {
                path: self.path.to_path_buf(),
                message: format!("truncated at byte {} (needed {n} more)", self.pos),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let format = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(format("not a checkpoint (bad magic)".into()));
    }
    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.array::<1>()?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(r.array()?) as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| format(format!("invalid extents {dims:?} for `{name}`")))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| format("entry too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push((name, Tensor::new(dims, data)?));
    }
    if r.pos != bytes.len() {
        return Err(format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

/// Writes `entries` to `path` through a temporary file and a rename.
pub fn write(path: &Path, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    let bytes = encode(entries)?;
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    decode(&fs::read(path)?, path)
}

impl<T: Scalar> Model<T> {
    /// Every parameter and buffer in registration order, as `f32`.
    pub fn state_entries(&self) -> Vec<(String, Tensor<f32>)> {
        self.store().iter().map(|(_, e)| (e.name.clone(), e.value().cast())).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with_state(path, &[])
    }

    /// Saves parameters followed by `extra` entries, which must use
    /// [`STATE_PREFIX`] names.
    pub fn save_with_state(&self, path: &Path, extra: &[(String, Tensor<f32>)]) -> Result<()> {
        if let Some((name, _)) = extra.iter().find(|(n, _)| !n.starts_with(STATE_PREFIX)) {
            return Err(Error::Contract(format!(
                "training state entry `{name}` lacks the `{STATE_PREFIX}` prefix"
            )));
        }
        let mut entries = self.state_entries();
        entries.extend(extra.iter().cloned());
        write(path, &entries)
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        self.load_with_state(path).map(drop)
    }

    /// Loads every registered tensor from `path` and returns the training
    /// state entries found alongside them. Nothing is modified on error.
    pub fn load_with_state(&mut self, path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
        let format = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut params = HashMap::new();
        let mut state = Vec::new();
        for (name, t) in read(path)? {
            if name.starts_with(STATE_PREFIX) {
                state.push((name, t));
            } else if self.store().id(&name).is_none() {
                return Err(format(format!("unexpected parameter `{name}`")));
            } else if params.insert(name.clone(), t).is_some() {
                return Err(format(format!("duplicate parameter `{name}`")));
            }
        }
        let mut updates = Vec::with_capacity(params.len());
        for (id, e) in self.store().iter() {
            let t = params
                .get(&e.name)
                .ok_or_else(|| format(format!("missing parameter `{}`", e.name)))?;
            if t.dims() != e.value().dims() {
                return Err(Error::ParamShape {
                    name: e.name.clone(),
                    expected: e.value().dims().to_vec(),
                    found: t.dims().to_vec(),
                });
            }
            updates.push((id, t.cast::<T>()));
        }
        for (id, t) in updates {
            *self.store_mut().get_mut(id) = t;
        }
        Ok(state)
    }
}
