//! Binary tensor container.
//!
//! Layout, little-endian, no padding:
//!
//! ```text
//! "CRLN" | version: u32 | count: u32 |
//!   count x ( name_len: u16 | name: utf-8 | ndim: u8 | dims: u32 x ndim | payload: f32 x prod(dims) )
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CRLN";
pub const CONTAINER_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;

pub type NamedTensor = (String, Tensor<f32>);

/// Header entry of one stored tensor, as reported by `inspect`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryInfo {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
    pub payload_bytes: usize,
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    for (name, _) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateName(name.clone()));
        }
    }
    let count =
        u32::try_from(tensors.len()).map_err(|_| Error::validation("scene-model", "container", "too many tensors"))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::validation("scene-model", name.clone(), "name longer than 65535 bytes"))?;
        let ndim =
            u8::try_from(t.ndim()).map_err(|_| Error::validation("scene-model", name.clone(), "more than 255 dims"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(ndim);
        for &d in t.dims() {
            let d = u32::try_from(d).map_err(|_| Error::validation("scene-model", name.clone(), "dim exceeds u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n,
                available: self.buf.len() - self.pos,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn read_header(cur: &mut Cursor<'_>) -> Result<u32> {
    let available = cur.buf.len();
    if available < MAGIC.len() {
        return Err(Error::BadMagic {
            found: cur.buf.to_vec(),
        });
    }
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic.to_vec() });
    }
    let version = cur.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    cur.u32()
}

fn read_entry_header(cur: &mut Cursor<'_>) -> Result<(String, Vec<usize>, usize)> {
    let name_len = cur.u16()? as usize;
    let name_offset = cur.pos;
    let name = std::str::from_utf8(cur.take(name_len)?)
        .map_err(|_| {
            Error::validation(
                "scene-model",
                format!("name@{name_offset}"),
                "tensor name is not valid UTF-8",
            )
        })?
        .to_string();
    let ndim = cur.u8()? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(cur.u32()? as usize);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::validation("scene-model", name.clone(), "payload size overflows"))?;
    Ok((name, dims, count))
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let count = read_header(&mut cur)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..count {
        let (name, dims, payload) = read_entry_header(&mut cur)?;
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateName(name));
        }
        let raw = cur.take(payload)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| match e {
            Error::NonFinite { index } => Error::validation(
                "scene-model",
                name.clone(),
                format!("non-finite payload value at index {index}"),
            ),
            other => other,
        })?;
        out.push((name, t));
    }
    if cur.pos != bytes.len() {
        return Err(Error::validation(
            "scene-model",
            "container",
            format!("{} trailing bytes after last tensor", bytes.len() - cur.pos),
        ));
    }
    Ok(out)
}

/// Walks the headers without materializing payloads.
pub fn inspect(bytes: &[u8]) -> Result<Vec<EntryInfo>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let count = read_header(&mut cur)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let (name, dims, payload_bytes) = read_entry_header(&mut cur)?;
        let offset = cur.pos;
        cur.take(payload_bytes)?;
        out.push(EntryInfo {
            name,
            dims,
            offset,
            payload_bytes,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::validation(
            "scene-model",
            "container",
            format!("{} trailing bytes after last tensor", bytes.len() - cur.pos),
        ));
    }
    Ok(out)
}

pub fn write_tensor_container(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_container(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
