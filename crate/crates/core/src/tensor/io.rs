//! Binary tensor files and named-tensor checkpoints.
//!
//! Tensor file: `"MGT1"`, `u32` rank, `rank x u64` extents, then the row-major
//! payload as little-endian `f64`.
//!
//! Checkpoint file: `"MGC1"`, `u32` entry count, then per entry a `u32` name
//! length, the UTF-8 name, and an embedded tensor file. Entries are written in
//! name order so identical parameter sets produce identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{numel, Element, Result, Tensor, TensorError};

pub const TENSOR_MAGIC: &[u8; 4] = b"MGT1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGC1";

pub fn write_tensor<T: Element, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads one tensor as a constant.
pub fn read_tensor<T: Element, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(TensorError::Format(format!("bad tensor magic {magic:?}")));
    }
    let rank = read_u32(r)? as usize;
    if rank > 16 {
        return Err(TensorError::Format(format!("implausible rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u64(r).map(|e| e as usize))
        .collect::<Result<Vec<_>>>()?;
    let n = numel(&shape);
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(8)
        .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write_checkpoint<T: Element, W: Write>(w: &mut W, entries: &BTreeMap<String, Tensor<T>>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Element, R: Read>(r: &mut R) -> Result<BTreeMap<String, Tensor<T>>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(TensorError::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let count = read_u32(r)?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Format(e.to_string()))?;
        out.insert(name, read_tensor(r)?);
    }
    Ok(out)
}
