//! `DTXW` binary tensor container.
//!
//! Little-endian layout:
//!
//! ```text
//! "DTXW" | u32 version (=1) | u32 count
//! count × { u16 name_len | name (UTF-8) | u8 rank | rank × u32 dims | f32 × product(dims) }
//! ```
//!
//! Used for network weights (`<layer>.weight`, `<layer>.bias`), texture
//! statistics (`gram.<layer>`) and reference activations (`act.<layer>`).

use std::fs;
use std::path::Path;

use crate::{Error, Result, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"DTXW";
pub const VERSION: u32 = 1;

/// Decoding failures. Offsets are byte positions in the input.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContainerError {
    #[error("bad magic at offset 0: expected \"DTXW\"")]
    BadMagic,
    #[error("unsupported container version {0} at offset 4")]
    UnsupportedVersion(u32),
    #[error("truncated at offset {offset}: {needed} more bytes expected")]
    Truncated { offset: usize, needed: usize },
    #[error("tensor name at offset {offset} is not valid UTF-8")]
    InvalidName { offset: usize },
    #[error("invalid shape {dims:?} at offset {offset}")]
    InvalidShape { offset: usize, dims: Vec<usize> },
    #[error("duplicate tensor `{name}` at offset {offset}")]
    DuplicateName { offset: usize, name: String },
    #[error("{extra} trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
}

impl ContainerError {
    /// Byte offset of the first inconsistency.
    pub fn offset(&self) -> usize {
        match self {
            ContainerError::BadMagic => 0,
            ContainerError::UnsupportedVersion(_) => 4,
            ContainerError::Truncated { offset, .. }
            | ContainerError::InvalidName { offset }
            | ContainerError::InvalidShape { offset, .. }
            | ContainerError::DuplicateName { offset, .. }
            | ContainerError::TrailingBytes { offset, .. } => *offset,
        }
    }
}

/// Ordered collection of named `f32` tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, Tensor<f32>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor, converting to `f32`. Replaces an existing entry of the same name.
    pub fn insert<T: Scalar>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        let name = name.into();
        let tensor = tensor.cast::<f32>();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self
            .entries
            .iter()
            .map(|(n, t)| 3 + n.len() + 4 * t.dims().len() + 4 * t.len())
            .sum();
        let mut out = Vec::with_capacity(12 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dims().len() as u8);
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| ContainerError::BadMagic)? != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let count = r.u32()?;
        let mut entries: Vec<(String, Tensor<f32>)> = Vec::new();
        for _ in 0..count {
            let name_at = r.pos;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| ContainerError::InvalidName { offset: name_at + 2 })?
                .to_owned();
            if entries.iter().any(|(n, _)| *n == name) {
                return Err(ContainerError::DuplicateName { offset: name_at, name });
            }
            let shape_at = r.pos;
            let rank = r.u8()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let invalid = || ContainerError::InvalidShape {
                offset: shape_at,
                dims: dims.clone(),
            };
            let numel = crate::Shape::new(&dims).map_err(|_| invalid())?.numel();
            let raw = r.take(numel.checked_mul(4).ok_or_else(invalid)?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::from_vec(&dims, data).map_err(|_| invalid())?;
            entries.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(ContainerError::TrailingBytes {
                offset: r.pos,
                extra: bytes.len() - r.pos,
            });
        }
        Ok(Container { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(ContainerError::Truncated {
                offset: self.pos,
                needed: n,
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
