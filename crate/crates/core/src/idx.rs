//! Reader and writer for the IDX tensor format (big-endian magic and
//! dimension sizes followed by raw unsigned bytes).

use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad magic 0x{found:08x} (expected 0x{expected:08x})")]
    BadMagic { found: u32, expected: u32 },
    #[error("truncated file: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("dimension overflow: sizes {dims:?} do not fit in memory")]
    DimensionOverflow { dims: Vec<u32> },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

impl From<IdxError> for Error {
    fn from(e: IdxError) -> Self {
        Error::Format(e.to_string())
    }
}

/// An IDX file of unsigned bytes: the dimension sizes and the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdxInfo {
    pub kind: &'static str,
    pub magic: u32,
    pub dims: Vec<u32>,
    pub payload_bytes: usize,
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(IdxError::Truncated {
            needed: at + 4,
            available: bytes.len(),
        })
}

fn parse_with(bytes: &[u8], magic: u32) -> Result<IdxTensor, IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(IdxError::BadMagic { found, expected: magic });
    }
    let rank = (magic & 0xff) as usize;
    let dims: Vec<u32> = (0..rank).map(|i| read_u32(bytes, 4 + 4 * i)).collect::<Result<_, _>>()?;
    let header = 4 + 4 * rank;
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|p| p.checked_add(header).map(|_| p))
        .ok_or_else(|| IdxError::DimensionOverflow { dims: dims.clone() })?;
    let needed = header + payload;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(IdxError::TrailingBytes(bytes.len() - needed));
    }
    Ok(IdxTensor {
        magic,
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Parses a rank-3 image file (`n x rows x cols`).
pub fn parse_images(bytes: &[u8]) -> Result<IdxTensor, IdxError> {
    parse_with(bytes, IMAGES_MAGIC)
}

/// Parses a rank-1 label file.
pub fn parse_labels(bytes: &[u8]) -> Result<IdxTensor, IdxError> {
    parse_with(bytes, LABELS_MAGIC)
}

/// Parses either kind, chosen by the magic number.
pub fn parse_any(bytes: &[u8]) -> Result<IdxTensor, IdxError> {
    match read_u32(bytes, 0)? {
        LABELS_MAGIC => parse_labels(bytes),
        _ => parse_images(bytes),
    }
}

impl IdxTensor {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }

    pub fn info(&self) -> IdxInfo {
        IdxInfo {
            kind: if self.magic == LABELS_MAGIC { "labels" } else { "images" },
            magic: self.magic,
            dims: self.dims.clone(),
            payload_bytes: self.data.len(),
        }
    }

    /// Images flattened to rows and divided by their own Euclidean norm.
    /// Blank images cannot be normalized and are an error.
    pub fn to_unit_vectors(&self) -> Result<Array2<f64>> {
        if self.magic != IMAGES_MAGIC {
            return Err(Error::Format("not an image tensor".into()));
        }
        let n = self.dims[0] as usize;
        let width = self.dims[1] as usize * self.dims[2] as usize;
        let mut out = Array2::zeros((n, width));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let pixels = &self.data[i * width..(i + 1) * width];
            let norm = pixels.iter().map(|&p| (p as f64).powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Format(format!("image {i} is blank")));
            }
            row.iter_mut().zip(pixels).for_each(|(o, &p)| *o = p as f64 / norm);
        }
        Ok(out)
    }
}

pub fn load_images(path: impl AsRef<Path>) -> Result<IdxTensor> {
    Ok(parse_images(&std::fs::read(path)?)?)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<IdxTensor> {
    Ok(parse_labels(&std::fs::read(path)?)?)
}

pub fn load_any(path: impl AsRef<Path>) -> Result<IdxTensor> {
    Ok(parse_any(&std::fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 3, 4, 0, 1, 1, 1, 1]);
        b
    }

    #[test]
    fn image_fixture_round_trips() {
        let bytes = fixture();
        let t = parse_images(&bytes).unwrap();
        assert_eq!(t.dims, vec![2, 2, 2]);
        assert_eq!(t.data.len(), 8);
        assert_eq!(t.to_bytes(), bytes);
        let v = t.to_unit_vectors().unwrap();
        assert_eq!(v.row(0).to_vec(), vec![0.0, 0.6, 0.8, 0.0]);
        assert_eq!(v.row(1).to_vec(), vec![0.5; 4]);
    }

    #[test]
    fn label_file() {
        let bytes = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        let t = parse_labels(&bytes).unwrap();
        assert_eq!(t.data, vec![7, 3]);
        assert_eq!(parse_any(&bytes).unwrap().info().kind, "labels");
    }

    #[test]
    fn distinct_diagnostics() {
        let mut bad = fixture();
        bad[3] = 0x04;
        let e = parse_images(&bad).unwrap_err();
        assert_eq!(
            e,
            IdxError::BadMagic {
                found: 0x0804,
                expected: IMAGES_MAGIC
            }
        );
        assert!(e.to_string().contains("0x00000804"));
        let short = &fixture()[..20];
        assert!(matches!(parse_images(short), Err(IdxError::Truncated { needed: 24, available: 20 })));
        assert!(matches!(parse_images(&fixture()[..6]), Err(IdxError::Truncated { .. })));
        let huge = vec![0, 0, 8, 3, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff];
        assert!(matches!(parse_images(&huge), Err(IdxError::DimensionOverflow { .. })));
        let mut long = fixture();
        long.push(0);
        assert_eq!(parse_images(&long).unwrap_err(), IdxError::TrailingBytes(1));
    }
}
