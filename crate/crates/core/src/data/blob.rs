//! `MMEB` embedding blobs.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "MMEB" (4D 4D 45 42)
//! 4       4           version (u32, currently 1)
//! 8       4           dtype (u32: 0 = f32, 1 = f64)
//! 12      4           rank (u32, 2 or 3)
//! 16      4 * rank    extents (u32 each)
//! ...     prod * w    row-major payload
//! ```

use super::DataError;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MMEB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(code: u32) -> Result<Self, DataError> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(DataError::BadDtype(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobHeader {
    pub version: u32,
    pub dtype: Dtype,
    pub dims: Vec<usize>,
}

impl BlobHeader {
    pub fn header_len(&self) -> usize {
        16 + 4 * self.dims.len()
    }

    pub fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.dtype.width()
    }
}

fn check_rank(rank: usize) -> Result<(), DataError> {
    if rank == 2 || rank == 3 {
        Ok(())
    } else {
        Err(DataError::BadRank(rank))
    }
}

pub fn write_blob(t: &Tensor, dtype: Dtype) -> Result<Vec<u8>, DataError> {
    check_rank(t.rank())?;
    let mut out = Vec::with_capacity(16 + 4 * t.rank() + t.len() * dtype.width());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dtype as u32).to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for d in t.shape() {
        let d = u32::try_from(*d).map_err(|_| DataError::Malformed(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        Dtype::F32 => t.data().iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        Dtype::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or(DataError::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

pub fn read_header(bytes: &[u8]) -> Result<BlobHeader, DataError> {
    if bytes.len() < 4 {
        return Err(DataError::Truncated {
            expected: 4,
            actual: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(DataError::BadMagic([bytes[0], bytes[1], bytes[2], bytes[3]]));
    }
    let version = u32_at(bytes, 4)?;
    if version != VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(u32_at(bytes, 8)?)?;
    let rank = u32_at(bytes, 12)? as usize;
    check_rank(rank)?;
    let dims = (0..rank)
        .map(|i| u32_at(bytes, 16 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BlobHeader { version, dtype, dims })
}

/// Decodes one blob from the front of `bytes`, returning the tensor (always
/// promoted to `f64`) and the number of bytes consumed. Trailing bytes are
/// left alone so blobs can be packed back to back.
pub fn decode_blob(bytes: &[u8]) -> Result<(Tensor, usize), DataError> {
    let header = read_header(bytes)?;
    let start = header.header_len();
    let end = start + header.payload_len();
    if bytes.len() < end {
        return Err(DataError::Truncated {
            expected: end,
            actual: bytes.len(),
        });
    }
    let payload = &bytes[start..end];
    let data: Vec<f64> = match header.dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    Ok((Tensor::new(header.dims, data)?, end))
}

pub fn read_blob(bytes: &[u8]) -> Result<Tensor, DataError> {
    decode_blob(bytes).map(|(t, _)| t)
}
