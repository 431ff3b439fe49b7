//! MMF matrix files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MMF1"
//! 4       4     rows   (u32)
//! 8       4     cols   (u32)
//! 12      1     dtype  (1 = f32, 2 = f64)
//! 13      ...   rows * cols values, row-major
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::diffcore::Tensor;

pub const MAGIC: &[u8; 4] = b"MMF1";
pub const HEADER_LEN: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, FormatError> {
        match tag {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(FormatError::UnknownDtype(other)),
        }
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {0:02x?}, expected \"MMF1\"")]
    BadMagic([u8; 4]),
    #[error("truncated file: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("dimension overflow: {rows} x {cols}")]
    DimensionOverflow { rows: u64, cols: u64 },
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("cannot encode a tensor of shape {0:?}")]
    NotMatrix(Vec<usize>),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl FormatError {
    /// Stable numeric code per failure kind.
    pub fn code(&self) -> u32 {
        match self {
            FormatError::BadMagic(_) => 1,
            FormatError::Truncated { .. } => 2,
            FormatError::DimensionOverflow { .. } => 3,
            FormatError::UnknownDtype(_) => 4,
            FormatError::TrailingBytes(_) => 5,
            FormatError::NotMatrix(_) => 6,
            FormatError::NonFinite(_) => 7,
            FormatError::Io { .. } => 8,
        }
    }
}

/// Serializes a matrix. `F32` rounds each value to single precision.
pub fn encode(matrix: &Tensor, dtype: Dtype) -> Result<Vec<u8>, FormatError> {
    if !matrix.is_matrix() {
        return Err(FormatError::NotMatrix(matrix.shape().to_vec()));
    }
    if let Some(i) = matrix.data().iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(i));
    }
    let (rows, cols) = (matrix.rows(), matrix.cols());
    if rows > u32::MAX as usize || cols > u32::MAX as usize {
        return Err(FormatError::DimensionOverflow {
            rows: rows as u64,
            cols: cols as u64,
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.push(dtype.tag());
    for &v in matrix.data() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

/// Parses one matrix from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Tensor, Dtype, usize), FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as u64;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as u64;
    let dtype = Dtype::from_tag(bytes[12])?;
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.width() as u64))
        .and_then(|n| usize::try_from(n).ok())
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or(FormatError::DimensionOverflow { rows, cols })?;
    if bytes.len() < payload {
        return Err(FormatError::Truncated {
            needed: payload,
            available: bytes.len(),
        });
    }
    let body = &bytes[HEADER_LEN..payload];
    let data: Vec<f64> = match dtype {
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64)
            .collect(),
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
            .collect(),
    };
    let t = Tensor::matrix(rows as usize, cols as usize, data).expect("payload length checked");
    Ok((t, dtype, payload))
}

/// Parses a complete MMF buffer; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<(Tensor, Dtype), FormatError> {
    let (t, dtype, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - used));
    }
    Ok((t, dtype))
}

fn io_err(path: &Path, e: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_matrix(
    path: impl AsRef<Path>,
    matrix: &Tensor,
    dtype: Dtype,
) -> Result<(), FormatError> {
    let path = path.as_ref();
    let bytes = encode(matrix, dtype)?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Tensor, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(decode(&bytes)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = encode(&t, Dtype::F64).unwrap();
        assert_eq!(
            &b[..13],
            &[b'M', b'M', b'F', b'1', 1, 0, 0, 0, 2, 0, 0, 0, 2]
        );
        assert_eq!(b.len(), 13 + 16);
        assert_eq!(&b[13..21], &1.0f64.to_le_bytes());
    }

    #[test]
    fn error_kinds_are_distinct() {
        let good = encode(&Tensor::zeros(&[2, 2]), Dtype::F32).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(FormatError::BadMagic(_))));
        assert!(matches!(
            decode(&good[..good.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
        let mut bad = good.clone();
        bad[12] = 9;
        assert!(matches!(decode(&bad), Err(FormatError::UnknownDtype(9))));
        let mut huge = good[..13].to_vec();
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12] = 2;
        let err = decode(&huge).unwrap_err();
        assert!(matches!(
            err,
            FormatError::DimensionOverflow { .. } | FormatError::Truncated { .. }
        ));
        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(FormatError::TrailingBytes(1))));
        let codes = [
            FormatError::BadMagic(*b"XXXX").code(),
            FormatError::Truncated {
                needed: 1,
                available: 0,
            }
            .code(),
            FormatError::DimensionOverflow { rows: 1, cols: 1 }.code(),
        ];
        assert_eq!(codes, [1, 2, 3]);
    }

    #[test]
    fn empty_matrix_round_trips() {
        let t = Tensor::zeros(&[0, 5]);
        let b = encode(&t, Dtype::F64).unwrap();
        assert_eq!(b.len(), HEADER_LEN);
        assert_eq!(decode(&b).unwrap().0.shape(), &[0, 5]);
    }

    #[test]
    fn rejects_non_finite_and_non_matrix() {
        assert!(matches!(
            encode(&Tensor::scalar(1.0), Dtype::F64),
            Err(FormatError::NotMatrix(_))
        ));
        let t = Tensor::row_vector(&[1.0, f64::INFINITY]);
        assert!(matches!(
            encode(&t, Dtype::F64),
            Err(FormatError::NonFinite(1))
        ));
    }
}
