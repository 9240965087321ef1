//! Named-tensor checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"MRTC"            magic
//! u32                format version (1)
//! u32                entry count
//! per entry:
//!   u32 + bytes      name length, UTF-8 name
//!   u8               dtype tag (0 = f32, 1 = f64)
//!   u32 + u32*ndim   rank, dimensions
//!   raw payload      numel * width bytes, little-endian floats
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::param::ParamRef;
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MRTC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A tensor read back from a checkpoint, kept at its stored precision.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    pub fn to_element<T: Element>(&self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<T: Element>(entries: &[(String, Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE as u8);
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        T::to_le_bytes_vec(t.data(), &mut out);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated checkpoint while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, StoredTensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad checkpoint magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported checkpoint version {version}"),
        });
    }
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format {
                offset: at as u64,
                msg: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let tag_at = r.pos;
        let tag = r.take(1, "dtype")?[0];
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let bad_shape = |offset: usize| Error::Format {
            offset: offset as u64,
            msg: format!("invalid shape {shape:?} for {name}"),
        };
        let t = match tag {
            0 => {
                let raw = r.take(numel * 4, "f32 payload")?;
                let data = raw.chunks_exact(4).map(f32::from_le_chunk).collect();
                StoredTensor::F32(Tensor::new(shape.clone(), data).map_err(|_| bad_shape(tag_at))?)
            }
            1 => {
                let raw = r.take(numel * 8, "f64 payload")?;
                let data = raw.chunks_exact(8).map(f64::from_le_chunk).collect();
                StoredTensor::F64(Tensor::new(shape.clone(), data).map_err(|_| bad_shape(tag_at))?)
            }
            other => {
                return Err(Error::Format {
                    offset: tag_at as u64,
                    msg: format!("unknown dtype tag {other}"),
                })
            }
        };
        entries.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            msg: "trailing bytes after last checkpoint entry".into(),
        });
    }
    Ok(entries)
}

pub fn save<T: Element>(path: impl AsRef<Path>, params: &[ParamRef<T>]) -> Result<()> {
    let entries: Vec<(String, Tensor<T>)> = params
        .iter()
        .map(|p| (p.name().to_string(), p.value().clone()))
        .collect();
    fs::write(path, encode(&entries))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<(String, StoredTensor)>> {
    decode(&fs::read(path)?)
}

/// Copies stored tensors into `params` by name. Every parameter must be
/// present with a matching shape.
pub fn restore<T: Element>(params: &[ParamRef<T>], entries: &[(String, StoredTensor)]) -> Result<()> {
    let by_name: HashMap<&str, &StoredTensor> =
        entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for p in params {
        let stored = by_name
            .get(p.name())
            .ok_or_else(|| Error::Compat(format!("checkpoint has no tensor named {}", p.name())))?;
        if stored.shape() != p.shape().as_slice() {
            return Err(Error::Compat(format!(
                "shape mismatch for {}: checkpoint {:?}, model {:?}",
                p.name(),
                stored.shape(),
                p.shape()
            )));
        }
        p.set_value(stored.to_element());
    }
    Ok(())
}
