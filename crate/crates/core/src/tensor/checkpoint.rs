//! Named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"FDCG"  u32 version
//! repeated until EOF:
//!     u32 name_len, name (UTF-8), u32 rank, rank x u64 extents,
//!     numel x f32 payload
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"FDCG";
pub const VERSION: u32 = 1;

/// One record of the container.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Self {
        NamedArray {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = t
            .data()
            .iter()
            .map(|v| v.to_f32().unwrap_or(f32::NAN))
            .collect();
        NamedArray::new(name, t.shape(), data)
    }

    pub fn to_values<T: Scalar>(&self) -> Vec<T> {
        self.data.iter().map(|&v| T::of(f64::from(v))).collect()
    }
}

pub fn encode(records: &[NamedArray]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for r in records {
        if numel(&r.shape) != r.data.len() {
            return Err(Error::shape("checkpoint", &r.shape, &[r.data.len()]));
        }
        let name = r.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Format(format!(
            "truncated checkpoint: wanted {n} bytes, {} left",
            buf.len()
        )));
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

fn read_u32(buf: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, 4)?.try_into().unwrap()))
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    let mut buf = bytes;
    if take(&mut buf, 4)? != MAGIC {
        return Err(Error::Format("bad magic, not an FDCG container".into()));
    }
    let version = read_u32(&mut buf)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let mut records = Vec::new();
    while !buf.is_empty() {
        let name_len = read_u32(&mut buf)? as usize;
        let name = std::str::from_utf8(take(&mut buf, name_len)?)
            .map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = read_u32(&mut buf)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(take(&mut buf, 8)?.try_into().unwrap());
            shape.push(usize::try_from(d).map_err(|_| Error::Format(format!("extent {d} too large")))?);
        }
        let n = numel(&shape);
        let payload = take(&mut buf, n.checked_mul(4).ok_or_else(|| Error::Format("payload overflow".into()))?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(NamedArray { name, shape, data });
    }
    Ok(records)
}

pub fn save(path: &Path, records: &[NamedArray]) -> Result<()> {
    let bytes = encode(records)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<NamedArray>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Looks a record up by name.
pub fn find<'a>(records: &'a [NamedArray], name: &str) -> Result<&'a NamedArray> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::Format(format!("checkpoint has no tensor named {name}")))
}
