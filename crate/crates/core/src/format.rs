//! MVGF, a little-endian binary tensor container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "MVGF"
//! 4       4           format version, u32 (= 1)
//! 8       1           dtype code, u8 (1 = f32, 2 = f64)
//! 9       1           rank, u8
//! 10      8 * rank    dimension sizes, u64 each
//! ...     numel * sz  payload, row-major
//! ```
//!
//! There is no padding, alignment or compression, and nothing may follow
//! the payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::error::Result;
use crate::tensor::{AnyTensor, DType, Element, Tensor};

pub const MAGIC: [u8; 4] = *b"MVGF";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected \"MVGF\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("invalid rank {0}")]
    InvalidRank(u8),
    #[error("dimension {axis} is zero")]
    ZeroDimension { axis: usize },
    #[error("dimensions {dims:?} overflow the addressable size")]
    DimensionOverflow { dims: Vec<u64> },
    #[error("truncated {section}: expected {expected} bytes, found {found}")]
    Truncated {
        section: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("{extra} unexpected bytes after the payload")]
    TrailingBytes { extra: u64 },
    #[error("expected dtype {expected:?}, file holds {found:?}")]
    DtypeMismatch { expected: DType, found: DType },
}

impl FormatError {
    pub fn kind(&self) -> &'static str {
        match self {
            FormatError::BadMagic { .. } => "bad_magic",
            FormatError::UnsupportedVersion(_) => "unsupported_version",
            FormatError::UnknownDtype(_) => "unknown_dtype",
            FormatError::InvalidRank(_) => "invalid_rank",
            FormatError::ZeroDimension { .. } => "zero_dimension",
            FormatError::DimensionOverflow { .. } => "dimension_overflow",
            FormatError::Truncated { .. } => "truncated",
            FormatError::TrailingBytes { .. } => "trailing_bytes",
            FormatError::DtypeMismatch { .. } => "dtype_mismatch",
        }
    }
}

fn encode_typed<T: Element>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(t.numel() * T::DTYPE.size());
    for &v in t.data() {
        v.extend_le_bytes(out);
    }
}

/// Serialises a tensor to bytes. Tensors of rank above 255 are rejected.
pub fn encode(t: &AnyTensor) -> Result<Vec<u8>> {
    if t.shape().len() > u8::MAX as usize {
        return Err(FormatError::InvalidRank(0).into());
    }
    let mut out = Vec::new();
    match t {
        AnyTensor::F32(t) => encode_typed(t, &mut out),
        AnyTensor::F64(t) => encode_typed(t, &mut out),
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], FormatError> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(FormatError::Truncated {
                section,
                expected: n as u64,
                found: remaining as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn decode_payload<T: Element>(shape: Vec<usize>, payload: &[u8]) -> Result<Tensor<T>> {
    let data = payload.chunks_exact(T::DTYPE.size()).map(T::from_le_slice).collect();
    Tensor::new(shape, data)
}

/// Parses bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = match cur.take(4, "magic") {
        Ok(m) => m.try_into().unwrap(),
        Err(e) => {
            // A short file whose prefix is already wrong is a magic error.
            if !MAGIC.starts_with(bytes) {
                let mut found = [0u8; 4];
                found[..bytes.len()].copy_from_slice(bytes);
                return Err(FormatError::BadMagic { found }.into());
            }
            return Err(e.into());
        }
    };
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic }.into());
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let code = cur.take(1, "dtype")?[0];
    let dtype = DType::from_code(code).ok_or(FormatError::UnknownDtype(code))?;
    let rank = cur.take(1, "rank")?[0];
    if rank == 0 {
        return Err(FormatError::InvalidRank(rank).into());
    }
    let dims_raw = cur.take(8 * rank as usize, "dimensions")?;
    let dims: Vec<u64> = dims_raw
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(axis) = dims.iter().position(|&d| d == 0) {
        return Err(FormatError::ZeroDimension { axis }.into());
    }
    let overflow = || FormatError::DimensionOverflow { dims: dims.clone() };
    let numel = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(overflow)?;
    let payload_len = numel
        .checked_mul(dtype.size() as u64)
        .filter(|&n| n <= isize::MAX as u64)
        .ok_or_else(overflow)?;
    let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
    let payload = cur.take(payload_len as usize, "payload")?;
    let extra = bytes.len() - cur.pos;
    if extra != 0 {
        return Err(FormatError::TrailingBytes { extra: extra as u64 }.into());
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(decode_payload(shape, payload)?),
        DType::F64 => AnyTensor::F64(decode_payload(shape, payload)?),
    })
}

pub fn write_tensor(mut w: impl Write, t: &AnyTensor) -> Result<()> {
    w.write_all(&encode(t)?)?;
    Ok(())
}

pub fn read_tensor(mut r: impl Read) -> Result<AnyTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Writes `t` to `path` in MVGF format, replacing any existing file.
pub fn write_features(path: impl AsRef<Path>, t: impl Into<AnyTensor>) -> Result<()> {
    fs::write(path, encode(&t.into())?)?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<AnyTensor> {
    decode(&fs::read(path)?)
}

/// Reads a file that must hold `f32` data.
pub fn read_f32(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    match read_features(path)? {
        AnyTensor::F32(t) => Ok(t),
        other => Err(FormatError::DtypeMismatch {
            expected: DType::F32,
            found: other.dtype(),
        }
        .into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn header(dtype: u8, dims: &[u64]) -> Vec<u8> {
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.push(dtype);
        b.push(dims.len() as u8);
        for d in dims {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b
    }

    fn format_err(bytes: &[u8]) -> FormatError {
        match decode(bytes).unwrap_err() {
            Error::Format(e) => e,
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn layout_is_exact() {
        let t = Tensor::<f32>::new([2], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&t.into()).unwrap();
        let mut expected = header(1, &[2]);
        expected.extend_from_slice(&1f32.to_le_bytes());
        expected.extend_from_slice(&(-2f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn bad_magic() {
        let mut b = header(1, &[1]);
        b[..4].copy_from_slice(b"XXXX");
        b.extend_from_slice(&0f32.to_le_bytes());
        assert_eq!(format_err(&b), FormatError::BadMagic { found: *b"XXXX" });
    }

    #[test]
    fn truncated_payload() {
        let mut b = header(1, &[2, 2]);
        for v in [1f32, 2.0, 3.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(
            format_err(&b),
            FormatError::Truncated {
                section: "payload",
                expected: 16,
                found: 12
            }
        );
    }

    #[test]
    fn header_errors_are_distinct() {
        assert!(matches!(format_err(&header(7, &[1])), FormatError::UnknownDtype(7)));
        assert!(matches!(format_err(&header(1, &[])), FormatError::InvalidRank(0)));
        assert!(matches!(
            format_err(&header(2, &[u64::MAX, 4])),
            FormatError::DimensionOverflow { .. }
        ));
        assert!(matches!(
            format_err(&header(1, &[3, 0])),
            FormatError::ZeroDimension { axis: 1 }
        ));
        let mut b = header(1, &[1]);
        b[4] = 9;
        assert!(matches!(format_err(&b), FormatError::UnsupportedVersion(9)));
        assert!(matches!(format_err(b"MV"), FormatError::Truncated { .. }));
        let mut b = header(1, &[1]);
        b.extend_from_slice(&[0; 5]);
        assert!(matches!(format_err(&b), FormatError::TrailingBytes { extra: 1 }));
    }
}
