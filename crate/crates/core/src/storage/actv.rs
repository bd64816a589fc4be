//! ACTV activation tensor files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ACTV"
//! 4       2     format version, u16 LE (= 1)
//! 6       1     dtype: 1 = f32, 2 = f64
//! 7       1     rank, u8 (= 4)
//! 8       32    dims [n, C, H, W], four u64 LE
//! 40      2     layer name length L, u16 LE
//! 42      L     layer name, UTF-8
//! 42+L    ...   n·C·H·W values, LE, order [sample][channel][row][col]
//! ```
//!
//! Nothing may follow the payload.

use std::fs;
use std::path::Path;

use super::StorageError;
use crate::activations::LayerActivations;

pub const MAGIC: &[u8; 4] = b"ACTV";
pub const FORMAT_VERSION: u16 = 1;
const RANK: u8 = 4;
const FIXED_HEADER: usize = 4 + 2 + 1 + 1 + 4 * 8 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    /// Values are rounded to `f32` on write.
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, StorageError> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(StorageError::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn encode_activations(acts: &LayerActivations, dtype: Dtype) -> Result<Vec<u8>, StorageError> {
    let name = acts.layer_name().as_bytes();
    let name_len = u16::try_from(name.len()).map_err(|_| StorageError::NameTooLong(name.len()))?;
    let mut out = Vec::with_capacity(FIXED_HEADER + name.len() + acts.data().len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(RANK);
    for dim in [acts.cluster_size(), acts.channels(), acts.height(), acts.width()] {
        out.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name);
    match dtype {
        Dtype::F32 => {
            for &v in acts.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in acts.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, len: usize) -> Result<&'a [u8], StorageError> {
    let end = at.checked_add(len).filter(|&e| e <= bytes.len()).ok_or(StorageError::TruncatedHeader)?;
    let slice = &bytes[*at..end];
    *at = end;
    Ok(slice)
}

/// Parses an ACTV byte buffer. Never returns a partially filled tensor.
pub fn decode_activations(bytes: &[u8]) -> Result<(LayerActivations, Dtype), StorageError> {
    let mut at = 0;
    if take(bytes, &mut at, 4)? != MAGIC {
        return Err(StorageError::BadMagic);
    }
    let version = u16::from_le_bytes(take(bytes, &mut at, 2)?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(StorageError::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(take(bytes, &mut at, 1)?[0])?;
    let rank = take(bytes, &mut at, 1)?[0];
    if rank != RANK {
        return Err(StorageError::BadRank(rank));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        let raw = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().expect("8 bytes"));
        *d = usize::try_from(raw).map_err(|_| StorageError::DimensionOverflow)?;
    }
    let name_len = u16::from_le_bytes(take(bytes, &mut at, 2)?.try_into().expect("2 bytes")) as usize;
    let name = std::str::from_utf8(take(bytes, &mut at, name_len)?)
        .map_err(|_| StorageError::InvalidLayerName)?
        .to_owned();

    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(StorageError::DimensionOverflow)?;
    let expected = count.checked_mul(dtype.size()).ok_or(StorageError::DimensionOverflow)?;
    let payload = &bytes[at..];
    if payload.len() < expected {
        return Err(StorageError::TruncatedPayload { expected, got: payload.len() });
    }
    if payload.len() > expected {
        return Err(StorageError::TrailingBytes(payload.len() - expected));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let [n, c, h, w] = dims;
    Ok((LayerActivations::new(name, n, c, h, w, data)?, dtype))
}

pub fn write_activations(acts: &LayerActivations, dtype: Dtype, path: &Path) -> Result<(), StorageError> {
    let bytes = encode_activations(acts, dtype)?;
    fs::write(path, bytes).map_err(|e| StorageError::io(path, e))
}

pub fn read_activations(path: &Path) -> Result<LayerActivations, StorageError> {
    let bytes = fs::read(path).map_err(|e| StorageError::io(path, e))?;
    Ok(decode_activations(&bytes)?.0)
}
