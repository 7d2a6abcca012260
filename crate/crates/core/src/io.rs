//! `TNSR` v1 binary tensor files.
//!
//! Layout: ASCII `TNSR`, u32 LE version (1), u32 LE ndim (1 or 2), ndim u64 LE
//! extents, then the row-major payload as f64 LE.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u32 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.ndim() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &extent in t.shape() {
        out.extend_from_slice(&(extent as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic = cursor
        .take(4)
        .ok_or_else(|| Error::Format("file shorter than header".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = cursor
        .u32()
        .ok_or_else(|| Error::Format("missing version".into()))?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let ndim = cursor
        .u32()
        .ok_or_else(|| Error::Format("missing ndim".into()))?;
    if !(1..=2).contains(&ndim) {
        return Err(Error::Format(format!("ndim must be 1 or 2, got {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim as usize);
    for _ in 0..ndim {
        let extent = cursor
            .u64()
            .ok_or_else(|| Error::Format("missing extent".into()))?;
        let extent = usize::try_from(extent)
            .map_err(|_| Error::Format(format!("extent {extent} does not fit in memory")))?;
        shape.push(extent);
    }
    let expected = shape
        .iter()
        .try_fold(1usize, |acc, &x| acc.checked_mul(x))
        .ok_or_else(|| Error::Format("extent product overflows".into()))?;
    let payload = &bytes[cursor.pos..];
    let found = payload.len() / 8;
    if payload.len() % 8 != 0 || found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            payload.len() - expected * 8
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new_finite(shape, data)
}

pub fn tensor_write(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn tensor_read(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}
