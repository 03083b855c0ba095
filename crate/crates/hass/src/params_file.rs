//! `HASSPRM` parameter files.
//!
//! ```text
//! "HASSPRM"  version: u16  count: u32
//! per tensor: name_len: u16, UTF-8 name, rank: u8, rank × u32 extents,
//!             float32 payload in row-major order
//! ```
//!
//! Values are narrowed to `f32` on write, so a model reloaded from disk equals
//! the original up to that rounding, and re-saving it reproduces the file.

use std::fs;
use std::path::Path;

use hass_core::params::NamedTensors;
use hass_core::{Model, Tensor};

use crate::error::FormatError;

pub const MAGIC: &[u8; 7] = b"HASSPRM";
pub const VERSION: u16 = 1;

pub fn encode_params(named: &NamedTensors) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(named.len()).map_err(|_| FormatError::HeaderRange)?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in named {
        let len = u16::try_from(name.len()).map_err(|_| FormatError::HeaderRange)?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.dims().len() as u8);
        for &d in t.dims() {
            let d = u32::try_from(d).map_err(|_| FormatError::HeaderRange)?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            let narrow = v as f32;
            if !narrow.is_finite() {
                return Err(FormatError::NonFiniteParam { name: name.clone() });
            }
            out.extend_from_slice(&narrow.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn slice(&mut self, len: usize) -> Result<&'a [u8], FormatError> {
        let found = self.bytes.len() as u64;
        let end = self.pos.checked_add(len).ok_or(FormatError::HeaderRange)?;
        let s = self.bytes.get(self.pos..end).ok_or(FormatError::Truncated {
            expected: end as u64,
            found,
        })?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.slice(N)?.try_into().expect("length checked"))
    }
}

/// Parses a complete file image. Never panics on malformed input.
pub fn decode_params(bytes: &[u8]) -> Result<NamedTensors, FormatError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let mut c = Cursor {
        bytes,
        pos: MAGIC.len(),
    };
    let version = u16::from_le_bytes(c.array()?);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(c.array()?) as usize;
    let mut named: NamedTensors = Vec::new();
    for index in 0..count {
        let len = u16::from_le_bytes(c.array()?) as usize;
        let name = std::str::from_utf8(c.slice(len)?)
            .map_err(|_| FormatError::BadName { index })?
            .to_owned();
        let rank = c.array::<1>()?[0];
        if !(1..=3).contains(&rank) {
            return Err(FormatError::BadRank { name, rank });
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(c.array()?) as usize);
        }
        if dims.contains(&0) {
            return Err(FormatError::ZeroExtent { name });
        }
        let numel = dims
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or(FormatError::HeaderRange)?;
        let payload = c.slice(numel)?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::NonFiniteParam { name });
        }
        if named.iter().any(|(n, _)| *n == name) {
            return Err(FormatError::DuplicateName(name));
        }
        let tensor = Tensor::new(&dims, data).map_err(|_| FormatError::HeaderRange)?;
        named.push((name, tensor));
    }
    if c.pos != bytes.len() {
        return Err(FormatError::LengthMismatch {
            expected: c.pos as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(named)
}

pub fn encode_model(model: &Model) -> Result<Vec<u8>, FormatError> {
    encode_params(&model.to_named())
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), FormatError> {
    fs::write(path, encode_model(model)?).map_err(|e| FormatError::io(path, e))
}

/// Reads the named tensors of a model file; build the model with [`Model::from_named`].
pub fn read_params(path: &Path) -> Result<NamedTensors, FormatError> {
    decode_params(&fs::read(path).map_err(|e| FormatError::io(path, e))?)
}
