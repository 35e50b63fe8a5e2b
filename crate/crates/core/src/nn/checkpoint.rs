//! Binary parameter checkpoints.
//!
//! Layout (little-endian): 8-byte magic `MARSCKPT`, `u32` version, `u32` record count,
//! then per record in name order: `u32` name length, UTF-8 name, `u32` rank,
//! `u64` per dimension, `f64` values.

use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParameterSet;
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MARSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ParameterSet> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::format(path, format!("implausible rank {rank} for {name}")));
        }
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= bytes.len() / 8)
            .ok_or_else(|| Error::format(path, format!("implausible shape {shape:?}")))?;
        let data = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params
            .insert(name, Tensor::new(shape, data)?)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last record"));
    }
    Ok(params)
}

pub fn save(params: &ParameterSet, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParameterSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
